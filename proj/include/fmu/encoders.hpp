#pragma once

#include "fmu/checkpoint.hpp"
#include "fmu/image.hpp"
#include "fmu/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace fmu::encoders {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

struct FaceBox {
  double x = 0, y = 0, w = 0, h = 0;
  double score = 0;
  // left eye, right eye, nose, mouth-left, mouth-right
  std::array<std::array<double, 2>, 5> keypoints{};
};

inline void validate_face_box(const FaceBox& b, int img_w, int img_h) {
  check_range(b.x >= 0 && b.y >= 0 && b.w > 0 && b.h > 0 && b.x + b.w <= img_w &&
                  b.y + b.h <= img_h,
              "face box outside image bounds");
  for (const auto& kp : b.keypoints)
    check_range(kp[0] >= 0 && kp[0] < img_w && kp[1] >= 0 && kp[1] < img_h,
                "face keypoint outside image bounds");
}

inline json face_box_to_json(const FaceBox& b) {
  json kps = json::array();
  for (const auto& kp : b.keypoints) kps.push_back({kp[0], kp[1]});
  return json{{"x", b.x}, {"y", b.y}, {"w", b.w}, {"h", b.h}, {"score", b.score}, {"keypoints", kps}};
}

inline FaceBox face_box_from_json(const json& j) {
  FaceBox b;
  b.x = j.at("x").get<double>();
  b.y = j.at("y").get<double>();
  b.w = j.at("w").get<double>();
  b.h = j.at("h").get<double>();
  b.score = j.at("score").get<double>();
  const auto& kps = j.at("keypoints");
  if (!kps.is_array() || kps.size() != 5)
    throw FormatError("face annotation: expected 5 keypoints");
  for (size_t i = 0; i < 5; ++i) {
    b.keypoints[i][0] = kps[i][0].get<double>();
    b.keypoints[i][1] = kps[i][1].get<double>();
  }
  return b;
}

template <typename S>
struct TextEmbedding {
  Mat<S> tokens;  // L x d_ctx
  bool truncated = false;
};

struct EncoderConfig {
  std::string vision = "stub";
  std::string identity = "stub";
  std::string text = "stub";
  std::string detector = "stub";
  int d_vis = 64;
  int d_ctx = 64;
  int patch = 16;
  int max_text_len = 77;
  int id_grid = 16;  // identity stub downsamples to id_grid x id_grid
  uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// Vision: image -> P x d_vis patch tokens
// ---------------------------------------------------------------------------

template <typename S>
class VisionBackend {
 public:
  virtual ~VisionBackend() = default;
  virtual int dim() const = 0;
  virtual int patch() const = 0;

  Mat<S> encode(const ImageTensor<S>& img) const {
    validate_image(img, "encode_image_patches");
    const int p = patch();
    check_dim(img.height >= p && img.width >= p, "encode_image_patches: image smaller than one patch");
    check_dim(img.height % p == 0 && img.width % p == 0,
              "encode_image_patches: image size must be a multiple of the patch size");
    const int gy = img.height / p, gx = img.width / p;
    Mat<S> tokens(static_cast<Index>(gy) * gx, dim());
    Mat<S> block(1, static_cast<Index>(p) * p * 3);
    for (int ty = 0; ty < gy; ++ty)
      for (int tx = 0; tx < gx; ++tx) {
        Index col = 0;
        for (int yy = 0; yy < p; ++yy)
          for (int xx = 0; xx < p; ++xx)
            for (int c = 0; c < 3; ++c)
              block(0, col++) = img.at(ty * p + yy, tx * p + xx, c);
        tokens.row(static_cast<Index>(ty) * gx + tx) = project(block);
      }
    return tokens;
  }

 protected:
  virtual Mat<S> project(const Mat<S>& block) const = 0;
};

// Fixed seeded random linear projection of non-overlapping patches, no bias.
template <typename S>
class StubVision : public VisionBackend<S> {
 public:
  StubVision(int d_vis, int patch, uint64_t seed) : d_vis_(d_vis), patch_(patch) {
    Rng rng(derive_seed(seed, "encoders.vision"));
    w_ = gaussian_matrix<S>(d_vis, static_cast<Index>(patch) * patch * 3, rng,
                            1.0 / std::sqrt(static_cast<double>(patch) * patch * 3));
  }
  int dim() const override { return d_vis_; }
  int patch() const override { return patch_; }

 protected:
  Mat<S> project(const Mat<S>& block) const override { return block * w_.transpose(); }

 private:
  int d_vis_, patch_;
  Mat<S> w_;
};

template <typename S>
class PretrainedVision : public VisionBackend<S> {
 public:
  PretrainedVision(const std::string& path, int patch) : patch_(patch) {
    Checkpoint ck = load_checkpoint(path);
    const CheckpointSection* sec = ck.find("vision");
    if (!sec || sec->tensors.empty())
      throw CheckpointError("vision backend: no 'vision' section in " + path);
    w_ = tensor_to_mat<S>(sec->tensors.front());
    check_dim(w_.cols() == static_cast<Index>(patch) * patch * 3,
              "vision backend: weight width does not match patch size");
  }
  int dim() const override { return static_cast<int>(w_.rows()); }
  int patch() const override { return patch_; }

 protected:
  Mat<S> project(const Mat<S>& block) const override { return block * w_.transpose(); }

 private:
  int patch_;
  Mat<S> w_;
};

// ---------------------------------------------------------------------------
// Identity: square face crop -> unit-norm 512 vector
// ---------------------------------------------------------------------------

inline constexpr int kIdDim = 512;

template <typename S>
class IdentityBackend {
 public:
  virtual ~IdentityBackend() = default;

  Vec<S> embed(const ImageTensor<S>& face) const {
    validate_image(face, "encode_face_identity");
    check_dim(face.height == face.width, "encode_face_identity: face crop must be square");
    Vec<S> v = project(face);
    double n = std::sqrt(static_cast<double>(v.template cast<double>().squaredNorm()));
    if (n < 1e-12)
      throw DegenerateInputError("encode_face_identity: zero-norm embedding before normalization");
    return v / static_cast<S>(n);
  }

 protected:
  virtual Vec<S> project(const ImageTensor<S>& face) const = 0;
};

template <typename S>
class StubIdentity : public IdentityBackend<S> {
 public:
  StubIdentity(int grid, uint64_t seed) : grid_(grid) {
    Rng rng(derive_seed(seed, "encoders.identity"));
    w_ = gaussian_matrix<S>(kIdDim, static_cast<Index>(grid) * grid * 3, rng,
                            1.0 / std::sqrt(static_cast<double>(grid) * grid * 3));
  }

 protected:
  Vec<S> project(const ImageTensor<S>& face) const override {
    ImageTensor<S> small = resize_bilinear(face, grid_, grid_);
    Mat<S> flat(1, static_cast<Index>(grid_) * grid_ * 3);
    Index col = 0;
    for (int y = 0; y < grid_; ++y)
      for (int x = 0; x < grid_; ++x)
        for (int c = 0; c < 3; ++c) flat(0, col++) = small.at(y, x, c);
    return (flat * w_.transpose()).row(0).transpose();
  }

 private:
  int grid_;
  Mat<S> w_;
};

template <typename S>
class PretrainedIdentity : public IdentityBackend<S> {
 public:
  PretrainedIdentity(const std::string& path, int grid) : grid_(grid) {
    Checkpoint ck = load_checkpoint(path);
    const CheckpointSection* sec = ck.find("identity");
    if (!sec || sec->tensors.empty())
      throw CheckpointError("identity backend: no 'identity' section in " + path);
    w_ = tensor_to_mat<S>(sec->tensors.front());
    check_dim(w_.rows() == kIdDim, "identity backend: embedding length must be 512");
    check_dim(w_.cols() == static_cast<Index>(grid) * grid * 3,
              "identity backend: weight width does not match downsample grid");
  }

 protected:
  Vec<S> project(const ImageTensor<S>& face) const override {
    ImageTensor<S> small = resize_bilinear(face, grid_, grid_);
    Mat<S> flat(1, static_cast<Index>(grid_) * grid_ * 3);
    Index col = 0;
    for (int y = 0; y < grid_; ++y)
      for (int x = 0; x < grid_; ++x)
        for (int c = 0; c < 3; ++c) flat(0, col++) = small.at(y, x, c);
    return (flat * w_.transpose()).row(0).transpose();
  }

 private:
  int grid_;
  Mat<S> w_;
};

// ---------------------------------------------------------------------------
// Text: prompt -> L x d_ctx tokens. The empty prompt maps to a dedicated
// null row so the unconditional branch of guidance is well-defined.
// ---------------------------------------------------------------------------

inline std::vector<std::string> tokenize(const std::string& prompt) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : prompt) {
    unsigned char c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

template <typename S>
class TextBackend {
 public:
  virtual ~TextBackend() = default;
  virtual int dim() const = 0;
  virtual int max_len() const = 0;

  TextEmbedding<S> encode(const std::string& prompt) const {
    TextEmbedding<S> emb;
    if (prompt.empty()) {
      emb.tokens = null_row();
      return emb;
    }
    std::vector<std::string> toks = tokenize(prompt);
    if (toks.empty()) {
      emb.tokens = null_row();
      return emb;
    }
    if (static_cast<int>(toks.size()) > max_len()) {
      toks.resize(max_len());
      emb.truncated = true;
    }
    emb.tokens.resize(static_cast<Index>(toks.size()), dim());
    for (size_t i = 0; i < toks.size(); ++i) emb.tokens.row(static_cast<Index>(i)) = token_row(toks[i]);
    return emb;
  }

  virtual Mat<S> null_row() const = 0;

 protected:
  virtual Mat<S> token_row(const std::string& token) const = 0;
};

// Per-token vectors seeded by FNV-1a of the token mixed with the run seed.
template <typename S>
class StubText : public TextBackend<S> {
 public:
  StubText(int d_ctx, int max_len, uint64_t seed)
      : d_ctx_(d_ctx), max_len_(max_len), base_(derive_seed(seed, "encoders.text")) {}
  int dim() const override { return d_ctx_; }
  int max_len() const override { return max_len_; }

  Mat<S> null_row() const override {
    Rng rng(derive_seed(base_, "null"));
    return gaussian_matrix<S>(1, d_ctx_, rng);
  }

 protected:
  Mat<S> token_row(const std::string& token) const override {
    Rng rng(base_ ^ fnv1a64(token));
    return gaussian_matrix<S>(1, d_ctx_, rng);
  }

 private:
  int d_ctx_, max_len_;
  uint64_t base_;
};

// Vocabulary table from a checkpoint container; out-of-vocabulary tokens fall
// back to hash-seeded rows so any prompt stays encodable.
template <typename S>
class PretrainedText : public TextBackend<S> {
 public:
  PretrainedText(const std::string& path, int max_len) : max_len_(max_len) {
    Checkpoint ck = load_checkpoint(path);
    const CheckpointSection* sec = ck.find("text");
    if (!sec) throw CheckpointError("text backend: no 'text' section in " + path);
    json meta = json::parse(ck.config_json.empty() ? "{}" : ck.config_json);
    fallback_seed_ = meta.value("fallback_seed", uint64_t(0));
    for (const auto& t : sec->tensors) {
      if (t.name == "null") {
        null_ = tensor_to_mat<S>(t);
      } else {
        vocab_[t.name] = tensor_to_mat<S>(t);
      }
    }
    if (null_.size() == 0) throw CheckpointError("text backend: missing null row");
  }
  int dim() const override { return static_cast<int>(null_.cols()); }
  int max_len() const override { return max_len_; }
  Mat<S> null_row() const override { return null_; }

 protected:
  Mat<S> token_row(const std::string& token) const override {
    auto it = vocab_.find(token);
    if (it != vocab_.end()) return it->second;
    Rng rng(fallback_seed_ ^ fnv1a64(token));
    return gaussian_matrix<S>(1, dim(), rng);
  }

 private:
  int max_len_;
  uint64_t fallback_seed_ = 0;
  Mat<S> null_;
  std::map<std::string, Mat<S>> vocab_;
};

// ---------------------------------------------------------------------------
// Detector: image path -> boxes sorted by descending score. The stub reads
// "<image>.faces.json" sidecars so pipeline tests stay deterministic.
// ---------------------------------------------------------------------------

class DetectorBackend {
 public:
  virtual ~DetectorBackend() = default;

  std::vector<FaceBox> detect(const std::string& image_path) const {
    std::vector<FaceBox> boxes = lookup(image_path);
    std::stable_sort(boxes.begin(), boxes.end(),
                     [](const FaceBox& a, const FaceBox& b) { return a.score > b.score; });
    return boxes;
  }

 protected:
  virtual std::vector<FaceBox> lookup(const std::string& image_path) const = 0;
};

class StubDetector : public DetectorBackend {
 protected:
  std::vector<FaceBox> lookup(const std::string& image_path) const override {
    std::string sidecar = image_path + ".faces.json";
    std::ifstream f(sidecar);
    if (!f) return {};
    json j;
    try {
      f >> j;
    } catch (const json::exception& e) {
      throw FormatError("face annotation " + sidecar + ": " + e.what());
    }
    std::vector<FaceBox> boxes;
    for (const auto& item : j) boxes.push_back(face_box_from_json(item));
    return boxes;
  }
};

// Detection index keyed by image basename, for running without sidecars.
class IndexedDetector : public DetectorBackend {
 public:
  explicit IndexedDetector(const std::string& index_path) {
    std::ifstream f(index_path);
    if (!f) throw IoError("detector backend: cannot open " + index_path);
    json j;
    try {
      f >> j;
    } catch (const json::exception& e) {
      throw FormatError("detector index " + index_path + ": " + e.what());
    }
    for (auto it = j.begin(); it != j.end(); ++it) {
      std::vector<FaceBox> boxes;
      for (const auto& item : it.value()) boxes.push_back(face_box_from_json(item));
      index_[it.key()] = std::move(boxes);
    }
  }

 protected:
  std::vector<FaceBox> lookup(const std::string& image_path) const override {
    auto it = index_.find(std::filesystem::path(image_path).filename().string());
    return it == index_.end() ? std::vector<FaceBox>{} : it->second;
  }

 private:
  std::map<std::string, std::vector<FaceBox>> index_;
};

// ---------------------------------------------------------------------------
// Factories: backend spec is "stub" or "pretrained:<path>".
// ---------------------------------------------------------------------------

inline bool parse_pretrained(const std::string& spec, std::string& path) {
  constexpr const char* kPrefix = "pretrained:";
  if (spec.rfind(kPrefix, 0) == 0) {
    path = spec.substr(std::string(kPrefix).size());
    return true;
  }
  return false;
}

template <typename S>
std::unique_ptr<VisionBackend<S>> make_vision(const EncoderConfig& cfg) {
  std::string path;
  if (cfg.vision == "stub") return std::make_unique<StubVision<S>>(cfg.d_vis, cfg.patch, cfg.seed);
  if (parse_pretrained(cfg.vision, path)) return std::make_unique<PretrainedVision<S>>(path, cfg.patch);
  throw ParameterError("encoders.vision: unknown backend '" + cfg.vision + "'");
}

template <typename S>
std::unique_ptr<IdentityBackend<S>> make_identity(const EncoderConfig& cfg) {
  std::string path;
  if (cfg.identity == "stub") return std::make_unique<StubIdentity<S>>(cfg.id_grid, cfg.seed);
  if (parse_pretrained(cfg.identity, path))
    return std::make_unique<PretrainedIdentity<S>>(path, cfg.id_grid);
  throw ParameterError("encoders.identity: unknown backend '" + cfg.identity + "'");
}

template <typename S>
std::unique_ptr<TextBackend<S>> make_text(const EncoderConfig& cfg) {
  std::string path;
  if (cfg.text == "stub") return std::make_unique<StubText<S>>(cfg.d_ctx, cfg.max_text_len, cfg.seed);
  if (parse_pretrained(cfg.text, path))
    return std::make_unique<PretrainedText<S>>(path, cfg.max_text_len);
  throw ParameterError("encoders.text: unknown backend '" + cfg.text + "'");
}

inline std::unique_ptr<DetectorBackend> make_detector(const EncoderConfig& cfg) {
  std::string path;
  if (cfg.detector == "stub") return std::make_unique<StubDetector>();
  if (parse_pretrained(cfg.detector, path)) return std::make_unique<IndexedDetector>(path);
  throw ParameterError("encoders.detector: unknown backend '" + cfg.detector + "'");
}

}  // namespace fmu::encoders
