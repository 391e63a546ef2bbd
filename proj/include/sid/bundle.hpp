#pragma once

// ModelBundle archive: everything one trained detector needs, in one file.
//
//   offset 0   "SIDB"
//          4   u32 format version (kBundleVersion)
//          8   u32 manifest length M
//         12   u64 blob section length B
//         20   M bytes of UTF-8 JSON manifest
//       20+M   B bytes of blobs
//
// Each blob listed in manifest["blobs"] occupies 12*count bytes at its offset
// within the blob section: count f64 values followed by count i32 Q16.16
// views. The i32 view must equal quantize(f64) element-wise. All integers and
// floats are little-endian.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "sid/detail/bytes.hpp"
#include "sid/detection.hpp"
#include "sid/error.hpp"
#include "sid/fixed_point.hpp"
#include "sid/lut.hpp"

namespace sid {

inline constexpr std::array<std::uint8_t, 4> kBundleMagic = {'S', 'I', 'D', 'B'};
inline constexpr std::uint32_t kBundleVersion = 1;
inline constexpr std::string_view kQuantizationTag = "Q16.16";

enum class ModelKind { Mlp, Svm, Ocsvm, LstmTh, PedLstmVote };

constexpr std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::Mlp: return "mlp";
    case ModelKind::Svm: return "svm";
    case ModelKind::Ocsvm: return "ocsvm";
    case ModelKind::LstmTh: return "lstm_th";
    case ModelKind::PedLstmVote: return "ped_lstm_vote";
  }
  return "?";
}

inline constexpr std::array<ModelKind, 5> kModelKinds = {ModelKind::Mlp, ModelKind::Svm, ModelKind::Ocsvm,
                                                         ModelKind::LstmTh, ModelKind::PedLstmVote};

inline ModelKind model_kind_from_string(std::string_view s) {
  for (auto k : kModelKinds)
    if (to_string(k) == s) return k;
  fail(ErrorCode::UnknownModelKind, "unknown model kind '" + std::string(s) + "'");
}

constexpr bool is_lstm_kind(ModelKind k) { return k == ModelKind::LstmTh || k == ModelKind::PedLstmVote; }

/// Per-channel z-score statistics of the training data.
struct Normalization {
  std::array<double, kChannels> mean{};
  std::array<double, kChannels> stddev{1, 1, 1, 1, 1, 1};

  SensorReading apply(const SensorReading& r) const {
    SensorReading out;
    for (std::size_t c = 0; c < kChannels; ++c) out[c] = (r[c] - mean[c]) / stddev[c];
    return out;
  }
  Window apply(std::span<const SensorReading> w) const {
    Window out;
    out.reserve(w.size());
    for (const auto& r : w) out.push_back(apply(r));
    return out;
  }
  friend bool operator==(const Normalization&, const Normalization&) = default;
};

struct Provenance {
  std::string trainer_version;
  std::uint64_t dataset_seed = 0;
  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct ModelBundle {
  ModelKind kind = ModelKind::Mlp;
  std::uint32_t user_id = 0;
  std::size_t window = 64;
  double alpha = 0.05;
  ErrorNorm error_norm = ErrorNorm::L2;
  Normalization normalization;
  double lstm_threshold = 0.0;  // mean-error threshold, lstm_th only
  std::optional<LstmParams> lstm;
  std::optional<MlpParams> mlp;
  std::optional<SvmParams> svm;
  std::vector<PedReference> references;
  LutSet luts;
  Provenance provenance;

  void validate() const {
    if (window < 2) fail(ErrorCode::InvalidArgument, "bundle window must be at least 2");
    for (double s : normalization.stddev)
      if (!(s > 0)) fail(ErrorCode::InvalidArgument, "normalization stddev must be positive");
    switch (kind) {
      case ModelKind::Mlp:
        if (!mlp) fail(ErrorCode::ShapeMismatch, "mlp bundle without mlp parameters");
        mlp->validate();
        detail::require(mlp->input_size() == window * kChannels, "mlp input size differs from window * 6");
        break;
      case ModelKind::Svm:
      case ModelKind::Ocsvm:
        if (!svm) fail(ErrorCode::ShapeMismatch, "svm bundle without svm parameters");
        svm->validate();
        detail::require(svm->support_vectors.cols == window * kChannels, "svm dimension differs from window * 6");
        if ((kind == ModelKind::Ocsvm) != (svm->variant == SvmVariant::OneClass))
          fail(ErrorCode::InvalidArgument, "svm variant does not match the model kind");
        break;
      case ModelKind::LstmTh:
      case ModelKind::PedLstmVote:
        if (!lstm) fail(ErrorCode::ShapeMismatch, "lstm bundle without lstm parameters");
        lstm->validate();
        break;
    }
    if (kind == ModelKind::PedLstmVote) {
      if (references.empty()) fail(ErrorCode::ShapeMismatch, "ped_lstm_vote bundle without reference PEDs");
      for (const auto& r : references) {
        r.validate();
        if (r.n != window - 1) fail(ErrorCode::ShapeMismatch, "reference PED n differs from window - 1");
      }
    }
    luts.sigmoid.validate();
    luts.tanh.validate();
    luts.exp.validate();
  }

  friend bool operator==(const ModelBundle&, const ModelBundle&) = default;
};

namespace detail {

struct Blob {
  std::vector<std::size_t> shape;
  std::vector<double> values;
  std::vector<std::int32_t> raw;
};

class BlobWriter {
 public:
  void add(const std::string& name, std::vector<std::size_t> shape, std::span<const double> values) {
    std::vector<std::int32_t> raw(values.size());
    for (std::size_t k = 0; k < values.size(); ++k) raw[k] = quantize(values[k]).raw();
    add_raw(name, std::move(shape), values, raw);
  }

  /// Quantized-first data: the f64 view is derived from the raw words.
  void add_fixed(const std::string& name, std::span<const FixedPoint32> words) {
    std::vector<double> values(words.size());
    std::vector<std::int32_t> raw(words.size());
    for (std::size_t k = 0; k < words.size(); ++k) {
      values[k] = words[k].to_real();
      raw[k] = words[k].raw();
    }
    add_raw(name, {words.size()}, values, raw);
  }

  nlohmann::json& index() { return index_; }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  void add_raw(const std::string& name, std::vector<std::size_t> shape, std::span<const double> values,
               std::span<const std::int32_t> raw) {
    index_.push_back({{"name", name}, {"shape", shape}, {"offset", bytes_.size()}, {"count", values.size()}});
    for (double v : values) put_f64(bytes_, v);
    for (std::int32_t v : raw) put_i32(bytes_, v);
  }

  nlohmann::json index_ = nlohmann::json::array();
  std::vector<std::uint8_t> bytes_;
};

inline std::map<std::string, Blob> parse_blobs(const nlohmann::json& index, const std::uint8_t* section,
                                               std::uint64_t section_bytes, std::uint64_t section_offset) {
  std::map<std::string, Blob> blobs;
  for (const auto& e : index) {
    const std::string name = e.at("name").get<std::string>();
    Blob b;
    b.shape = e.at("shape").get<std::vector<std::size_t>>();
    const auto count = e.at("count").get<std::uint64_t>();
    const auto offset = e.at("offset").get<std::uint64_t>();
    std::uint64_t expect = 1;
    for (auto d : b.shape) expect *= d;
    if (expect != count)
      fail(ErrorCode::ShapeMismatch, "blob '" + name + "' shape holds " + std::to_string(expect) + " values, count is " +
                                         std::to_string(count));
    if (offset > section_bytes || 12 * count > section_bytes - offset)
      fail(ErrorCode::ShapeMismatch, "blob '" + name + "' at file offset " + std::to_string(section_offset + offset) +
                                         " needs " + std::to_string(12 * count) + " bytes, " +
                                         std::to_string(offset > section_bytes ? 0 : section_bytes - offset) +
                                         " available");
    const std::uint8_t* p = section + offset;
    b.values.resize(count);
    b.raw.resize(count);
    for (std::uint64_t k = 0; k < count; ++k) b.values[k] = get_f64(p + 8 * k);
    for (std::uint64_t k = 0; k < count; ++k) {
      b.raw[k] = get_i32(p + 8 * count + 4 * k);
      if (b.raw[k] != quantize(b.values[k]).raw())
        fail(ErrorCode::QuantizationMismatch,
             "blob '" + name + "' element " + std::to_string(k) + " at file offset " +
                 std::to_string(section_offset + offset + 8 * count + 4 * k) + ": i32 view " + std::to_string(b.raw[k]) +
                 " != quantize(" + std::to_string(b.values[k]) + ")");
    }
    if (!blobs.emplace(name, std::move(b)).second) fail(ErrorCode::CorruptFile, "duplicate blob '" + name + "'");
  }
  return blobs;
}

class BlobReader {
 public:
  explicit BlobReader(std::map<std::string, Blob> blobs) : blobs_(std::move(blobs)) {}

  const Blob& get(const std::string& name) const {
    const auto it = blobs_.find(name);
    if (it == blobs_.end()) fail(ErrorCode::ShapeMismatch, "missing blob '" + name + "'");
    return it->second;
  }

  std::vector<double> vector(const std::string& name, std::optional<std::size_t> size = std::nullopt) const {
    const Blob& b = get(name);
    if (b.shape.size() != 1 || (size && b.shape[0] != *size))
      fail(ErrorCode::ShapeMismatch, "blob '" + name + "' has an unexpected shape");
    return b.values;
  }

  Matrix matrix(const std::string& name, std::optional<std::size_t> rows = std::nullopt,
                std::optional<std::size_t> cols = std::nullopt) const {
    const Blob& b = get(name);
    if (b.shape.size() != 2 || (rows && b.shape[0] != *rows) || (cols && b.shape[1] != *cols))
      fail(ErrorCode::ShapeMismatch, "blob '" + name + "' has an unexpected shape");
    Matrix m(b.shape[0], b.shape[1]);
    m.data = b.values;
    return m;
  }

  double scalar(const std::string& name) const { return vector(name, 1).front(); }

  std::vector<FixedPoint32> fixed(const std::string& name) const {
    const Blob& b = get(name);
    std::vector<FixedPoint32> out(b.raw.size());
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = FixedPoint32::from_raw(b.raw[k]);
    return out;
  }

 private:
  std::map<std::string, Blob> blobs_;
};

inline void write_lut(BlobWriter& w, const LutTable& t) {
  const std::string p = "lut." + std::string(to_string(t.function)) + ".";
  w.add_fixed(p + "slope", t.slope);
  w.add_fixed(p + "intercept", t.intercept);
  const std::vector<FixedPoint32> params = {t.lo, t.hi, t.below_slope, t.below_intercept, t.above_slope, t.above_intercept};
  w.add_fixed(p + "params", params);
}

inline LutTable read_lut(const BlobReader& r, LutFunction f) {
  const std::string p = "lut." + std::string(to_string(f)) + ".";
  LutTable t;
  t.function = f;
  t.slope = r.fixed(p + "slope");
  t.intercept = r.fixed(p + "intercept");
  const auto params = r.fixed(p + "params");
  if (params.size() != 6) fail(ErrorCode::ShapeMismatch, "blob '" + p + "params' must hold 6 values");
  t.lo = params[0];
  t.hi = params[1];
  t.below_slope = params[2];
  t.below_intercept = params[3];
  t.above_slope = params[4];
  t.above_intercept = params[5];
  t.validate();
  return t;
}

}  // namespace detail

inline std::vector<std::uint8_t> bundle_to_bytes(const ModelBundle& b) {
  b.validate();
  using nlohmann::json;
  detail::BlobWriter w;
  json m;
  m["format"] = "SIDB";
  m["version"] = kBundleVersion;
  m["kind"] = to_string(b.kind);
  m["user_id"] = b.user_id;
  m["window"] = b.window;
  m["alpha"] = b.alpha;
  m["error_norm"] = to_string(b.error_norm);
  m["quantization"] = kQuantizationTag;
  m["normalization"] = {{"mean", b.normalization.mean}, {"stddev", b.normalization.stddev}};
  m["lstm_threshold"] = b.lstm_threshold;
  m["provenance"] = {{"trainer_version", b.provenance.trainer_version}, {"dataset_seed", b.provenance.dataset_seed}};

  if (b.lstm) {
    const auto& p = *b.lstm;
    m["dims"] = {{"hidden", p.hidden}, {"input", kChannels}};
    for (std::size_t g = 0; g < 4; ++g) {
      const std::string n(kGateNames[g]);
      w.add("lstm.W_" + n, {p.hidden, kChannels}, p.W[g].data);
      w.add("lstm.U_" + n, {p.hidden, p.hidden}, p.U[g].data);
      w.add("lstm.b_" + n, {p.hidden}, p.b[g]);
    }
    w.add("lstm.V", {kChannels, p.hidden}, p.V.data);
    w.add("lstm.v_bias", {kChannels}, p.v_bias);
  }
  if (b.mlp) {
    const auto& p = *b.mlp;
    std::vector<std::size_t> sizes = {p.input_size()};
    for (const auto& l : p.layers) sizes.push_back(l.weight.rows);
    m["dims"] = {{"layers", sizes}};
    m["activation"] = to_string(p.activation);
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      const std::string n = "mlp.layer" + std::to_string(l) + ".";
      w.add(n + "weight", {p.layers[l].weight.rows, p.layers[l].weight.cols}, p.layers[l].weight.data);
      w.add(n + "bias", {p.layers[l].bias.size()}, p.layers[l].bias);
    }
  }
  if (b.svm) {
    const auto& p = *b.svm;
    m["dims"] = {{"support_vectors", p.support_vectors.rows}, {"input", p.support_vectors.cols}};
    w.add("svm.support_vectors", {p.support_vectors.rows, p.support_vectors.cols}, p.support_vectors.data);
    w.add("svm.coef", {p.coef.size()}, p.coef);
    w.add("svm.bias", {1}, std::vector<double>{p.bias});
    w.add("svm.gamma", {1}, std::vector<double>{p.gamma});
  }
  json refs = json::array();
  std::vector<double> thresholds;
  for (std::size_t k = 0; k < b.references.size(); ++k) {
    const auto& r = b.references[k];
    refs.push_back({{"n", r.n}, {"m", r.m}, {"bins", r.boundaries.size()}});
    w.add("ped." + std::to_string(k) + ".boundaries", {r.boundaries.size()}, r.boundaries);
    w.add("ped." + std::to_string(k) + ".cumulative", {r.cumulative.size()}, r.cumulative);
    thresholds.push_back(r.threshold);
  }
  m["references"] = refs;
  if (!thresholds.empty()) w.add("ped.thresholds", {thresholds.size()}, thresholds);
  detail::write_lut(w, b.luts.sigmoid);
  detail::write_lut(w, b.luts.tanh);
  detail::write_lut(w, b.luts.exp);
  m["blobs"] = w.index();

  const std::string manifest = m.dump(2);
  std::vector<std::uint8_t> out(kBundleMagic.begin(), kBundleMagic.end());
  detail::put_u32(out, kBundleVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(manifest.size()));
  detail::put_u64(out, w.bytes().size());
  out.insert(out.end(), manifest.begin(), manifest.end());
  out.insert(out.end(), w.bytes().begin(), w.bytes().end());
  return out;
}

inline ModelBundle bundle_from_bytes(const std::vector<std::uint8_t>& bytes) {
  using nlohmann::json;
  detail::ByteReader in(bytes, "bundle");
  const std::uint8_t* magic = in.take(4);
  if (!std::equal(kBundleMagic.begin(), kBundleMagic.end(), magic))
    fail(ErrorCode::CorruptFile, "bundle: bad magic at offset 0");
  const std::uint32_t version = in.u32();
  if (version != kBundleVersion)
    fail(ErrorCode::UnsupportedVersion, "bundle version " + std::to_string(version) + " (supported: " +
                                            std::to_string(kBundleVersion) + ")");
  const std::uint32_t manifest_len = in.u32();
  const std::uint64_t blob_len = in.u64();
  const std::uint8_t* mp = in.take(manifest_len);
  const std::uint64_t blob_offset = in.offset();
  // A short blob section is reported per blob so the failing array is named.
  const std::uint64_t available = std::min<std::uint64_t>(blob_len, in.remaining());
  const std::uint8_t* bp = bytes.data() + blob_offset;
  if (in.remaining() > blob_len)
    fail(ErrorCode::CorruptFile, "bundle: " + std::to_string(in.remaining() - blob_len) + " trailing bytes after offset " +
                                     std::to_string(blob_offset + blob_len));

  json m;
  try {
    m = json::parse(mp, mp + manifest_len);
  } catch (const json::exception& e) {
    fail(ErrorCode::CorruptFile, std::string("bundle manifest at offset 20: ") + e.what());
  }

  ModelBundle b;
  try {
    if (m.at("version").get<std::uint32_t>() != kBundleVersion)
      fail(ErrorCode::UnsupportedVersion, "bundle manifest version differs from header");
    if (m.at("quantization").get<std::string>() != kQuantizationTag)
      fail(ErrorCode::QuantizationMismatch, "bundle quantization format '" + m.at("quantization").get<std::string>() +
                                                "' (supported: Q16.16)");
    b.kind = model_kind_from_string(m.at("kind").get<std::string>());
    b.user_id = m.at("user_id").get<std::uint32_t>();
    b.window = m.at("window").get<std::size_t>();
    b.alpha = m.at("alpha").get<double>();
    b.error_norm = error_norm_from_string(m.at("error_norm").get<std::string>());
    b.normalization.mean = m.at("normalization").at("mean").get<std::array<double, kChannels>>();
    b.normalization.stddev = m.at("normalization").at("stddev").get<std::array<double, kChannels>>();
    b.lstm_threshold = m.at("lstm_threshold").get<double>();
    b.provenance.trainer_version = m.at("provenance").at("trainer_version").get<std::string>();
    b.provenance.dataset_seed = m.at("provenance").at("dataset_seed").get<std::uint64_t>();

    const detail::BlobReader r(detail::parse_blobs(m.at("blobs"), bp, available, blob_offset));
    if (available < blob_len)
      fail(ErrorCode::ShapeMismatch, "bundle blob section truncated: " + std::to_string(available) + " of " +
                                         std::to_string(blob_len) + " bytes present");

    if (is_lstm_kind(b.kind)) {
      const auto H = m.at("dims").at("hidden").get<std::size_t>();
      LstmParams p;
      p.hidden = H;
      for (std::size_t g = 0; g < 4; ++g) {
        const std::string n(kGateNames[g]);
        p.W[g] = r.matrix("lstm.W_" + n, H, kChannels);
        p.U[g] = r.matrix("lstm.U_" + n, H, H);
        p.b[g] = r.vector("lstm.b_" + n, H);
      }
      p.V = r.matrix("lstm.V", kChannels, H);
      p.v_bias = r.vector("lstm.v_bias", kChannels);
      b.lstm = std::move(p);
    } else if (b.kind == ModelKind::Mlp) {
      const auto sizes = m.at("dims").at("layers").get<std::vector<std::size_t>>();
      MlpParams p;
      p.activation = activation_from_string(m.at("activation").get<std::string>());
      for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        const std::string n = "mlp.layer" + std::to_string(l) + ".";
        p.layers.push_back({r.matrix(n + "weight", sizes[l + 1], sizes[l]), r.vector(n + "bias", sizes[l + 1])});
      }
      b.mlp = std::move(p);
    } else {
      SvmParams p;
      p.support_vectors = r.matrix("svm.support_vectors");
      p.coef = r.vector("svm.coef", p.support_vectors.rows);
      p.bias = r.scalar("svm.bias");
      p.gamma = r.scalar("svm.gamma");
      p.variant = b.kind == ModelKind::Ocsvm ? SvmVariant::OneClass : SvmVariant::TwoClass;
      b.svm = std::move(p);
    }

    const auto& refs = m.at("references");
    if (!refs.empty()) {
      const auto thresholds = r.vector("ped.thresholds", refs.size());
      for (std::size_t k = 0; k < refs.size(); ++k) {
        PedReference ref;
        ref.n = refs[k].at("n").get<std::size_t>();
        ref.m = refs[k].at("m").get<std::size_t>();
        const auto bins = refs[k].at("bins").get<std::size_t>();
        ref.boundaries = r.vector("ped." + std::to_string(k) + ".boundaries", bins);
        ref.cumulative = r.vector("ped." + std::to_string(k) + ".cumulative", bins);
        ref.threshold = thresholds[k];
        b.references.push_back(std::move(ref));
      }
    }
    b.luts.sigmoid = detail::read_lut(r, LutFunction::Sigmoid);
    b.luts.tanh = detail::read_lut(r, LutFunction::Tanh);
    b.luts.exp = detail::read_lut(r, LutFunction::Exp);
  } catch (const json::exception& e) {
    fail(ErrorCode::CorruptFile, std::string("bundle manifest: ") + e.what());
  }
  b.validate();
  return b;
}

inline void write_bundle(const ModelBundle& b, const std::string& path) { detail::write_file(path, bundle_to_bytes(b)); }

inline ModelBundle read_bundle(const std::string& path) {
  try {
    return bundle_from_bytes(detail::read_file(path));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::MissingFile) throw;
    throw Error(e.code(), path + ": " + std::string(e.what()).substr(to_string(e.code()).size() + 2));
  }
}

}  // namespace sid
