#pragma once

// HAPT ingestion, windowing and the per-user split protocol.
//
// A user's stream is the list of its WALK intervals in (experiment, start
// row) order. Splits cut the concatenated stream at 70% and 85% of its
// readings; an interval straddling a cut is divided, so no window can span
// two partitions.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"

#include "sid/detail/bytes.hpp"
#include "sid/bundle.hpp"
#include "sid/error.hpp"
#include "sid/types.hpp"

namespace sid {

constexpr int kHaptWalk = 1;

struct HaptDataset {
  /// Every user seen in the raw files, possibly with no WALK interval.
  std::map<std::uint32_t, std::vector<Window>> streams;

  std::size_t readings(std::uint32_t user) const {
    std::size_t n = 0;
    for (const auto& w : streams.at(user)) n += w.size();
    return n;
  }
  friend bool operator==(const HaptDataset&, const HaptDataset&) = default;
};

namespace detail {

/// Parses whitespace-separated rows of exactly `columns` numbers.
inline std::vector<std::vector<double>> read_table(const std::filesystem::path& path, std::size_t columns) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::MissingFile, "cannot open '" + path.string() + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<double> row;
    std::size_t pos = 0;
    for (;;) {
      while (pos < line.size() && std::isspace(static_cast<unsigned char>(line[pos]))) ++pos;
      if (pos == line.size()) break;
      std::size_t end = pos;
      while (end < line.size() && !std::isspace(static_cast<unsigned char>(line[end]))) ++end;
      double v = 0.0;
      const char* first = line.data() + pos;
      const char* last = line.data() + end;
      if (*first == '+') ++first;
      const auto [ptr, ec] = std::from_chars(first, last, v);
      if (ec != std::errc() || ptr != last || !std::isfinite(v))
        fail(ErrorCode::MalformedRow, path.string() + ":" + std::to_string(line_no) + ":" + std::to_string(pos + 1) +
                                          ": bad number '" + line.substr(pos, end - pos) + "'");
      row.push_back(v);
      pos = end;
    }
    if (row.empty()) continue;
    if (row.size() != columns)
      fail(ErrorCode::MalformedRow, path.string() + ":" + std::to_string(line_no) + ":" + std::to_string(line.size() + 1) +
                                        ": expected " + std::to_string(columns) + " columns, got " + std::to_string(row.size()));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string two_digits(std::uint32_t v) {
  std::string s = std::to_string(v);
  return s.size() < 2 ? "0" + s : s;
}

}  // namespace detail

inline std::string hapt_file_name(const char* sensor, std::uint32_t experiment, std::uint32_t user) {
  return std::string(sensor) + "_exp" + detail::two_digits(experiment) + "_user" + detail::two_digits(user) + ".txt";
}

/// Loads the UCI HAPT raw layout from `root` or `root/RawData`, keeping the
/// intervals labeled `activity`.
inline HaptDataset load_hapt(const std::filesystem::path& root, int activity = kHaptWalk) {
  namespace fs = std::filesystem;
  fs::path dir = root;
  if (!fs::exists(dir / "labels.txt") && fs::exists(root / "RawData" / "labels.txt")) dir = root / "RawData";
  if (!fs::exists(dir / "labels.txt")) fail(ErrorCode::MissingFile, "no labels.txt under '" + root.string() + "'");

  HaptDataset ds;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    unsigned e = 0, u = 0;
    char tail = 0;
    if (std::sscanf(name.c_str(), "acc_exp%u_user%u.tx%c", &e, &u, &tail) == 3 && tail == 't') {
      ds.streams[u];
    }
  }

  struct Label {
    std::uint32_t experiment, user, start, end;
  };
  std::vector<Label> labels;
  const auto rows = detail::read_table(dir / "labels.txt", 5);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    for (double v : r)
      if (v < 0 || v != std::floor(v))
        fail(ErrorCode::MalformedRow, (dir / "labels.txt").string() + ":" + std::to_string(i + 1) + ": non-integer field");
    const auto user = static_cast<std::uint32_t>(r[1]);
    ds.streams[user];
    if (static_cast<int>(r[2]) != activity) continue;
    if (r[3] < 1 || r[4] < r[3])
      fail(ErrorCode::MalformedRow, (dir / "labels.txt").string() + ":" + std::to_string(i + 1) + ": bad row range");
    labels.push_back({static_cast<std::uint32_t>(r[0]), user, static_cast<std::uint32_t>(r[3]), static_cast<std::uint32_t>(r[4])});
  }
  std::sort(labels.begin(), labels.end(),
            [](const Label& a, const Label& b) { return std::tie(a.experiment, a.start) < std::tie(b.experiment, b.start); });

  std::map<std::pair<std::uint32_t, std::uint32_t>, Window> cache;
  auto recording = [&](std::uint32_t e, std::uint32_t u) -> const Window& {
    auto it = cache.find({e, u});
    if (it != cache.end()) return it->second;
    const auto acc = detail::read_table(dir / hapt_file_name("acc", e, u), 3);
    const auto gyro = detail::read_table(dir / hapt_file_name("gyro", e, u), 3);
    if (acc.size() != gyro.size())
      fail(ErrorCode::ClockMismatch, "experiment " + std::to_string(e) + " user " + std::to_string(u) + ": " +
                                         std::to_string(acc.size()) + " accelerometer rows vs " + std::to_string(gyro.size()) +
                                         " gyroscope rows");
    Window w(acc.size());
    for (std::size_t t = 0; t < acc.size(); ++t)
      for (std::size_t c = 0; c < 3; ++c) {
        w[t][c] = acc[t][c];
        w[t][3 + c] = gyro[t][c];
      }
    return cache.emplace(std::pair{e, u}, std::move(w)).first->second;
  };

  for (const auto& l : labels) {
    const Window& rec = recording(l.experiment, l.user);
    if (l.end > rec.size())
      fail(ErrorCode::MalformedRow, "label rows " + std::to_string(l.start) + ".." + std::to_string(l.end) +
                                        " exceed the " + std::to_string(rec.size()) + " rows of experiment " +
                                        std::to_string(l.experiment));
    ds.streams[l.user].emplace_back(rec.begin() + (l.start - 1), rec.begin() + l.end);
  }
  return ds;
}

// ---- windows -------------------------------------------------------------------

inline std::size_t window_count(std::size_t length, std::size_t window, std::size_t stride) {
  if (window < 2 || stride < 1) fail(ErrorCode::InvalidArgument, "window must be >= 2 and stride >= 1");
  return length < window ? 0 : (length - window) / stride + 1;
}

/// Sliding windows contained in one interval.
inline std::vector<Window> make_windows(std::span<const SensorReading> interval, std::size_t window, std::size_t stride) {
  std::vector<Window> out;
  const std::size_t n = window_count(interval.size(), window, stride);
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k)
    out.emplace_back(interval.begin() + static_cast<std::ptrdiff_t>(k * stride),
                     interval.begin() + static_cast<std::ptrdiff_t>(k * stride + window));
  return out;
}

struct WindowSample {
  Window readings;
  std::uint32_t user = 0;
  bool impostor = false;
};

// ---- split ---------------------------------------------------------------------

enum class Partition { Train, Validation, Test };
constexpr std::array<std::string_view, 3> kPartitionNames = {"train", "validation", "test"};

/// Readings [begin, end) of interval `interval` of one user's stream.
struct ReadingRange {
  std::uint32_t interval = 0;
  std::uint32_t begin = 0;
  std::uint32_t end = 0;
  friend bool operator==(const ReadingRange&, const ReadingRange&) = default;
};

struct UserPartitions {
  std::array<std::vector<ReadingRange>, 3> ranges;
  const std::vector<ReadingRange>& operator[](Partition p) const { return ranges[static_cast<std::size_t>(p)]; }
  friend bool operator==(const UserPartitions&, const UserPartitions&) = default;
};

struct SplitConfig {
  std::size_t registered = 25;
  std::size_t unregistered = 5;
  std::size_t window = 64;
  std::size_t train_stride = 32;  // validation and test use stride = window
  double train_fraction = 0.70;
  double validation_fraction = 0.15;
};

struct UserSplit {
  std::uint64_t seed = 0;
  SplitConfig config;
  std::vector<std::uint32_t> registered;
  std::vector<std::uint32_t> unregistered;
  /// Registered users get all three partitions; unregistered users only a
  /// test partition, cut at the same time fractions.
  std::map<std::uint32_t, UserPartitions> users;

  std::vector<std::uint32_t> all_users() const {
    std::vector<std::uint32_t> all = registered;
    all.insert(all.end(), unregistered.begin(), unregistered.end());
    return all;
  }
  bool is_registered(std::uint32_t u) const { return std::find(registered.begin(), registered.end(), u) != registered.end(); }
  std::size_t stride(Partition p) const { return p == Partition::Train ? config.train_stride : config.window; }
  friend bool operator==(const UserSplit& a, const UserSplit& b) {
    return a.seed == b.seed && a.registered == b.registered && a.unregistered == b.unregistered && a.users == b.users &&
           a.config.window == b.config.window && a.config.train_stride == b.config.train_stride;
  }
};

struct EvalPair {
  std::uint32_t target = 0;     // registered user owning the model
  std::uint32_t candidate = 0;  // user whose test windows are fed to it
  bool impostor() const { return target != candidate; }
};

namespace detail {

inline std::array<std::vector<ReadingRange>, 3> cut_stream(const std::vector<Window>& intervals, double f_train, double f_val) {
  std::size_t total = 0;
  for (const auto& w : intervals) total += w.size();
  const std::array<std::size_t, 2> cuts = {static_cast<std::size_t>(std::floor(f_train * static_cast<double>(total))),
                                           static_cast<std::size_t>(std::floor((f_train + f_val) * static_cast<double>(total)))};
  std::array<std::vector<ReadingRange>, 3> out;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < intervals.size(); ++i) {
    const std::size_t a = offset, b = offset + intervals[i].size();
    const std::array<std::size_t, 4> edges = {a, std::clamp(cuts[0], a, b), std::clamp(cuts[1], a, b), b};
    for (std::size_t p = 0; p < 3; ++p)
      if (edges[p + 1] > edges[p])
        out[p].push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(edges[p] - a), static_cast<std::uint32_t>(edges[p + 1] - a)});
    offset = b;
  }
  return out;
}

}  // namespace detail

/// Windows of one partition of one user, in stream order.
inline std::vector<Window> partition_windows(const HaptDataset& ds, const UserSplit& split, std::uint32_t user, Partition p) {
  const auto it = split.users.find(user);
  if (it == split.users.end()) fail(ErrorCode::InsufficientData, "user " + std::to_string(user) + " is not in the split");
  const auto& stream = ds.streams.at(user);
  std::vector<Window> out;
  for (const auto& r : it->second[p]) {
    if (r.interval >= stream.size() || r.end > stream[r.interval].size() || r.begin > r.end)
      fail(ErrorCode::InsufficientData, "split range exceeds the dataset for user " + std::to_string(user));
    const std::span<const SensorReading> s(stream[r.interval].data() + r.begin, r.end - r.begin);
    for (auto& w : make_windows(s, split.config.window, split.stride(p))) out.push_back(std::move(w));
  }
  return out;
}

/// Per-channel mean and population standard deviation over the training ranges.
inline Normalization training_normalization(const HaptDataset& ds, const UserSplit& split, std::uint32_t user) {
  std::array<double, kChannels> s{}, s2{};
  std::size_t n = 0;
  const auto& stream = ds.streams.at(user);
  for (const auto& r : split.users.at(user)[Partition::Train]) {
    for (std::uint32_t t = r.begin; t < r.end; ++t) {
      for (std::size_t c = 0; c < kChannels; ++c) {
        s[c] += stream[r.interval][t][c];
        s2[c] += stream[r.interval][t][c] * stream[r.interval][t][c];
      }
      ++n;
    }
  }
  if (n == 0) fail(ErrorCode::InsufficientData, "user " + std::to_string(user) + " has no training readings");
  Normalization norm;
  for (std::size_t c = 0; c < kChannels; ++c) {
    norm.mean[c] = s[c] / static_cast<double>(n);
    const double var = s2[c] / static_cast<double>(n) - norm.mean[c] * norm.mean[c];
    norm.stddev[c] = std::sqrt(std::max(var, 1e-12));
  }
  return norm;
}

/// Deterministic split: users are shuffled with `seed`, the first
/// `registered` become registered users.
inline UserSplit build_split(const HaptDataset& ds, std::uint64_t seed, SplitConfig cfg = {}) {
  if (ds.streams.size() != cfg.registered + cfg.unregistered)
    fail(ErrorCode::InsufficientData, "dataset has " + std::to_string(ds.streams.size()) + " users, split needs " +
                                          std::to_string(cfg.registered + cfg.unregistered));
  UserSplit split;
  split.seed = seed;
  split.config = cfg;
  std::vector<std::uint32_t> ids;
  for (const auto& [u, _] : ds.streams) ids.push_back(u);
  std::mt19937_64 rng(seed);
  for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng() % i]);
  split.registered.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(cfg.registered));
  split.unregistered.assign(ids.begin() + static_cast<std::ptrdiff_t>(cfg.registered), ids.end());
  std::sort(split.registered.begin(), split.registered.end());
  std::sort(split.unregistered.begin(), split.unregistered.end());

  for (std::uint32_t u : ids) {
    auto parts = detail::cut_stream(ds.streams.at(u), cfg.train_fraction, cfg.validation_fraction);
    const bool reg = split.is_registered(u);
    if (!reg) parts[0].clear(), parts[1].clear();
    split.users[u].ranges = std::move(parts);
    for (Partition p : {Partition::Train, Partition::Validation, Partition::Test}) {
      if (!reg && p != Partition::Test) continue;
      if (partition_windows(ds, split, u, p).empty())
        fail(ErrorCode::InsufficientData, "user " + std::to_string(u) + " has no " +
                                              std::string(kPartitionNames[static_cast<std::size_t>(p)]) + " window of " +
                                              std::to_string(cfg.window) + " WALK readings");
    }
  }
  return split;
}

/// Every registered user against every user: registered x (registered + unregistered).
inline std::vector<EvalPair> evaluation_pairs(const UserSplit& split) {
  std::vector<EvalPair> pairs;
  const auto all = split.all_users();
  for (std::uint32_t t : split.registered)
    for (std::uint32_t c : all) pairs.push_back({t, c});
  return pairs;
}

/// Labeled training set: the target's training windows as negatives.
/// For the two-class scenario, as many positives sampled from the other
/// registered users' training windows.
inline std::vector<WindowSample> training_set(const HaptDataset& ds, const UserSplit& split, std::uint32_t target, bool two_class) {
  if (!split.is_registered(target)) fail(ErrorCode::InvalidArgument, "user " + std::to_string(target) + " is not registered");
  std::vector<WindowSample> out;
  for (auto& w : partition_windows(ds, split, target, Partition::Train)) out.push_back({std::move(w), target, false});
  if (!two_class) return out;
  std::vector<WindowSample> pool;
  for (std::uint32_t u : split.registered)
    if (u != target)
      for (auto& w : partition_windows(ds, split, u, Partition::Train)) pool.push_back({std::move(w), u, true});
  if (pool.empty()) fail(ErrorCode::InsufficientData, "no other registered users to draw positives from");
  std::mt19937_64 rng(split.seed * 1000003 + target);
  const std::size_t want = out.size();
  for (std::size_t k = 0; k < want && !pool.empty(); ++k) {
    const std::size_t j = rng() % pool.size();
    out.push_back(std::move(pool[j]));
    pool[j] = std::move(pool.back());
    pool.pop_back();
  }
  return out;
}

// ---- cached dataset ------------------------------------------------------------

constexpr std::uint32_t kDatasetVersion = 1;

/// "SIDD" | u32 version | u32 users | u32 intervals | users x u32 id |
/// intervals x {u32 user, u32 readings, u64 payload offset} | payload f64 x 6 per reading.
inline std::vector<std::uint8_t> dataset_to_bytes(const HaptDataset& ds) {
  std::vector<std::uint8_t> out = {'S', 'I', 'D', 'D'};
  std::size_t intervals = 0;
  for (const auto& [u, s] : ds.streams) intervals += s.size();
  detail::put_u32(out, kDatasetVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(ds.streams.size()));
  detail::put_u32(out, static_cast<std::uint32_t>(intervals));
  for (const auto& [u, s] : ds.streams) detail::put_u32(out, u);
  std::uint64_t offset = 0;
  for (const auto& [u, s] : ds.streams) {
    for (const auto& w : s) {
      detail::put_u32(out, u);
      detail::put_u32(out, static_cast<std::uint32_t>(w.size()));
      detail::put_u64(out, offset);
      offset += 8ull * kChannels * w.size();
    }
  }
  for (const auto& [u, s] : ds.streams)
    for (const auto& w : s)
      for (const auto& r : w)
        for (double v : r) detail::put_f64(out, v);
  return out;
}

inline HaptDataset dataset_from_bytes(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader in(bytes, "dataset");
  const auto magic = in.take(4);
  if (std::string(magic, magic + 4) != "SIDD") fail(ErrorCode::CorruptFile, "not a SIDD dataset file");
  const std::uint32_t version = in.u32();
  if (version != kDatasetVersion) fail(ErrorCode::UnsupportedVersion, "dataset version " + std::to_string(version));
  const std::uint32_t users = in.u32(), intervals = in.u32();
  HaptDataset ds;
  for (std::uint32_t k = 0; k < users; ++k) ds.streams[in.u32()];
  struct Entry {
    std::uint32_t user, readings;
    std::uint64_t offset;
  };
  std::vector<Entry> index(intervals);
  for (auto& e : index) {
    e.user = in.u32();
    e.readings = in.u32();
    e.offset = in.u64();
    if (!ds.streams.count(e.user)) fail(ErrorCode::CorruptFile, "interval of unknown user " + std::to_string(e.user));
  }
  const std::size_t payload = in.offset();
  for (const auto& e : index) {
    if (payload + e.offset + 8ull * kChannels * e.readings > bytes.size())
      fail(ErrorCode::CorruptFile, "interval payload at offset " + std::to_string(payload + e.offset) + " is truncated");
    Window w(e.readings);
    const std::uint8_t* p = bytes.data() + payload + e.offset;
    for (auto& r : w)
      for (double& v : r) {
        v = detail::get_f64(p);
        p += 8;
      }
    ds.streams[e.user].push_back(std::move(w));
  }
  return ds;
}

inline void write_dataset(const HaptDataset& ds, const std::string& path) { detail::write_file(path, dataset_to_bytes(ds)); }
inline HaptDataset read_dataset(const std::string& path) { return dataset_from_bytes(detail::read_file(path)); }

// ---- split file ----------------------------------------------------------------

inline nlohmann::json split_to_json(const UserSplit& s) {
  nlohmann::json j;
  j["format"] = "sid-split";
  j["version"] = 1;
  j["seed"] = s.seed;
  j["window"] = s.config.window;
  j["train_stride"] = s.config.train_stride;
  j["eval_stride"] = s.config.window;
  j["train_fraction"] = s.config.train_fraction;
  j["validation_fraction"] = s.config.validation_fraction;
  j["registered"] = s.registered;
  j["unregistered"] = s.unregistered;
  nlohmann::json users = nlohmann::json::object();
  for (const auto& [u, parts] : s.users) {
    nlohmann::json pj = nlohmann::json::object();
    for (std::size_t p = 0; p < 3; ++p) {
      nlohmann::json list = nlohmann::json::array();
      for (const auto& r : parts.ranges[p]) list.push_back({r.interval, r.begin, r.end});
      pj[std::string(kPartitionNames[p])] = list;
    }
    users[std::to_string(u)] = pj;
  }
  j["users"] = users;
  return j;
}

inline UserSplit split_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "sid-split") fail(ErrorCode::CorruptFile, "not a sid-split file");
    if (j.at("version") != 1) fail(ErrorCode::UnsupportedVersion, "split version " + j.at("version").dump());
    UserSplit s;
    s.seed = j.at("seed").get<std::uint64_t>();
    s.config.window = j.at("window").get<std::size_t>();
    s.config.train_stride = j.at("train_stride").get<std::size_t>();
    s.config.train_fraction = j.at("train_fraction").get<double>();
    s.config.validation_fraction = j.at("validation_fraction").get<double>();
    s.registered = j.at("registered").get<std::vector<std::uint32_t>>();
    s.unregistered = j.at("unregistered").get<std::vector<std::uint32_t>>();
    s.config.registered = s.registered.size();
    s.config.unregistered = s.unregistered.size();
    for (const auto& [key, pj] : j.at("users").items()) {
      UserPartitions parts;
      for (std::size_t p = 0; p < 3; ++p)
        for (const auto& r : pj.at(std::string(kPartitionNames[p])))
          parts.ranges[p].push_back({r.at(0).get<std::uint32_t>(), r.at(1).get<std::uint32_t>(), r.at(2).get<std::uint32_t>()});
      s.users[static_cast<std::uint32_t>(std::stoul(key))] = std::move(parts);
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::CorruptFile, std::string("split file: ") + e.what());
  }
}

inline void write_split(const UserSplit& s, const std::string& path) { detail::write_text_file(path, split_to_json(s).dump(1) + "\n"); }

inline UserSplit read_split(const std::string& path) {
  const auto bytes = detail::read_file(path);
  try {
    return split_from_json(nlohmann::json::parse(bytes.begin(), bytes.end()));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::CorruptFile, path + ": " + e.what());
  }
}

}  // namespace sid
