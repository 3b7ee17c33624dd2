// Copyright 2026 The arwkv Authors
// SPDX-License-Identifier: Apache-2.0

#include "arwkv/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "arwkv/errors.hpp"
#include "arwkv/kv_file.hpp"
#include "arwkv/rng.hpp"
#include "binary_io.hpp"

namespace arwkv {

void MelSpectrogram::validate() const {
  if (n_mels <= 0 || n_frames <= 0) throw ContractError("spectrogram dims must be positive");
  if (static_cast<Index>(data.size()) != n_mels * n_frames)
    throw ContractError("spectrogram holds " + std::to_string(data.size()) + " values for " + std::to_string(n_mels) +
                        "x" + std::to_string(n_frames));
  for (std::size_t i = 0; i < data.size(); ++i)
    if (!std::isfinite(data[i])) throw ContractError("spectrogram value " + std::to_string(i) + " is not finite");
}

std::string encode_melf(const MelSpectrogram& spec) {
  spec.validate();
  if (spec.n_mels > std::numeric_limits<std::uint32_t>::max() || spec.n_frames > std::numeric_limits<std::uint32_t>::max())
    throw ContractError("spectrogram dims exceed u32");
  detail::ByteWriter w;
  w.bytes("MELF");
  w.put<std::uint32_t>(kMelfVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(spec.n_mels));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(spec.n_frames));
  for (float f : spec.data) w.put_f32(f);
  return std::move(w.str());
}

MelSpectrogram decode_melf(std::string_view bytes, const std::string& origin) {
  detail::ByteReader r(bytes, origin);
  if (r.bytes(4, "magic") != "MELF") r.fail_at(0, "bad magic (expected \"MELF\")");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kMelfVersion) r.fail_at(4, "unsupported version " + std::to_string(version));
  MelSpectrogram s;
  s.n_mels = r.get<std::uint32_t>("n_mels");
  s.n_frames = r.get<std::uint32_t>("n_frames");
  if (s.n_mels == 0 || s.n_frames == 0) r.fail_at(8, "zero dimension");
  const std::uint64_t n = static_cast<std::uint64_t>(s.n_mels) * static_cast<std::uint64_t>(s.n_frames);
  if (r.remaining() < n * 4)
    r.fail("truncated data (need " + std::to_string(n * 4) + " bytes, have " + std::to_string(r.remaining()) + ")");
  if (r.remaining() > n * 4) r.fail_at(kMelfHeaderBytes + n * 4, "unexpected trailing bytes");
  s.data.resize(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::size_t at = r.offset();
    s.data[i] = r.get_f32("data");
    if (!std::isfinite(s.data[i])) r.fail_at(at, "non-finite sample");
  }
  s.sample_id = origin;
  return s;
}

void write_melf(const MelSpectrogram& spec, const std::filesystem::path& path) {
  detail::write_file_bytes(path.string(), encode_melf(spec));
}

MelSpectrogram read_melf(const std::filesystem::path& path) {
  MelSpectrogram s = decode_melf(detail::read_file_bytes(path.string()), path.string());
  s.sample_id = path.filename().string();
  return s;
}

Index Dataset::primary_label(Index i) const {
  const auto& row = targets.at(static_cast<std::size_t>(i));
  return static_cast<Index>(std::max_element(row.begin(), row.end()) - row.begin());
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.emplace_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <typename N>
bool parse_number(const std::string& s, N& out) {
  if (s.empty()) return false;
  std::istringstream in(s);
  in >> out;
  return !in.fail() && in.eof();
}

}  // namespace

Manifest parse_manifest(std::string_view text, const std::filesystem::path& base_dir, const std::string& origin) {
  Manifest m;
  bool have_k = false;
  Index line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  auto fail = [&](const std::string& msg) -> void {
    throw FormatError(origin + ":" + std::to_string(line_no) + ": " + msg);
  };
  while (std::getline(in, raw)) {
    ++line_no;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    if (line[0] == '@') {
      std::istringstream d(line.substr(1));
      std::string key;
      d >> key;
      if (key == "num_classes") {
        if (!(d >> m.num_classes) || m.num_classes < 1) fail("@num_classes needs a positive integer");
        have_k = true;
      } else if (key == "split") {
        if (!(d >> m.split)) fail("@split needs a name");
      } else if (key == "normalize") {
        if (!(d >> m.norm_mean >> m.norm_std) || !(m.norm_std > 0)) fail("@normalize needs MEAN and a positive STD");
      } else {
        fail("unknown directive '@" + key + "'");
      }
      continue;
    }
    if (!have_k) fail("@num_classes must appear before the first entry");
    const auto fields = split(raw, '\t');
    if (fields.size() < 2 || fields.size() > 3) fail("expected 'path<TAB>labels[<TAB>weights]'");
    ManifestEntry e;
    e.line = line_no;
    const std::string rel = trim(fields[0]);
    if (rel.empty()) fail("empty path");
    e.path = base_dir / rel;
    for (const auto& tok : split(fields[1], ',')) {
      Index label = 0;
      if (!parse_number(trim(tok), label)) fail("malformed label '" + trim(tok) + "'");
      if (label < 0 || label >= m.num_classes)
        fail("label " + std::to_string(label) + " out of range for num_classes=" + std::to_string(m.num_classes));
      e.labels.push_back(label);
    }
    if (fields.size() == 3) {
      for (const auto& tok : split(fields[2], ',')) {
        double w = 0;
        if (!parse_number(trim(tok), w) || w < 0) fail("malformed weight '" + trim(tok) + "'");
        e.weights.push_back(w);
      }
      if (e.weights.size() != e.labels.size()) fail("weights and labels differ in count");
      if (std::accumulate(e.weights.begin(), e.weights.end(), 0.0) <= 0) fail("weights sum to zero");
    }
    if (!std::filesystem::exists(e.path)) fail("file not found: " + e.path.string());
    m.entries.push_back(std::move(e));
  }
  if (!have_k) throw FormatError(origin + ": missing @num_classes directive");
  return m;
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str(), path.parent_path(), path.string());
}

Dataset load_dataset(const Manifest& manifest) {
  if (manifest.entries.empty()) throw ContractError("manifest has no entries");
  Dataset ds;
  ds.num_classes = manifest.num_classes;
  for (const auto& e : manifest.entries) {
    MelSpectrogram s = read_melf(e.path);
    if (!ds.samples.empty() && (s.n_mels != ds.samples[0].n_mels || s.n_frames != ds.samples[0].n_frames))
      throw FormatError(e.path.string() + ": shape " + std::to_string(s.n_mels) + "x" + std::to_string(s.n_frames) +
                        " differs from the first entry");
    if (manifest.norm_mean != 0.0 || manifest.norm_std != 1.0)
      for (float& v : s.data) v = static_cast<float>((v - manifest.norm_mean) / manifest.norm_std);
    std::vector<double> row(static_cast<std::size_t>(manifest.num_classes), 0.0);
    double total = 0;
    for (std::size_t i = 0; i < e.labels.size(); ++i) total += e.weights.empty() ? 1.0 : e.weights[i];
    for (std::size_t i = 0; i < e.labels.size(); ++i)
      row[e.labels[i]] += (e.weights.empty() ? 1.0 : e.weights[i]) / total;
    ds.samples.push_back(std::move(s));
    ds.labels.push_back(e.labels);
    ds.targets.push_back(std::move(row));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic task

std::string_view to_string(CuePosition c) { return c == CuePosition::Anywhere ? "anywhere" : "early_10pct"; }

CuePosition parse_cue_position(std::string_view s) {
  if (s == "anywhere") return CuePosition::Anywhere;
  if (s == "early_10pct") return CuePosition::Early10Pct;
  throw ConfigError("cue must be anywhere|early_10pct, got '" + std::string(s) + "'");
}

Index SyntheticTaskSpec::cue_frames() const { return std::min(n_frames, std::max<Index>(3, n_frames / 10)); }

double SyntheticTaskSpec::amplitude() const { return std::isinf(snr_db) ? 1.0 : std::pow(10.0, snr_db / 20.0); }

double SyntheticTaskSpec::noise_std() const { return std::isinf(snr_db) ? 0.0 : 1.0; }

void SyntheticTaskSpec::validate() const {
  if (num_classes < 2) throw ConfigError("synthetic task needs at least 2 classes");
  if (n_mels < 1 || n_frames < 1) throw ConfigError("synthetic task dims must be positive");
  if (std::isnan(snr_db)) throw ConfigError("snr_db is NaN");
}

std::vector<double> chirp_template(const SyntheticTaskSpec& task, Index k) {
  constexpr double kSigma = 1.5;
  const Index cue = task.cue_frames();
  const double centre = (static_cast<double>(k) + 0.5) * static_cast<double>(task.n_mels) / static_cast<double>(task.num_classes);
  const double slope = static_cast<double>((k % 3) - 1) * 0.75;
  std::vector<double> t(static_cast<std::size_t>(cue * task.n_mels));
  for (Index tau = 0; tau < cue; ++tau) {
    const double c = centre + slope * (static_cast<double>(tau) - static_cast<double>(cue - 1) / 2.0);
    for (Index m = 0; m < task.n_mels; ++m) {
      const double d = static_cast<double>(m) - c;
      t[tau * task.n_mels + m] = std::exp(-d * d / (2 * kSigma * kSigma));
    }
  }
  return t;
}

namespace {

Index max_start(const SyntheticTaskSpec& task) {
  const Index last = task.n_frames - task.cue_frames();
  if (task.cue_position == CuePosition::Anywhere) return last;
  const Index window = std::max<Index>(1, (task.n_frames + 9) / 10);
  return std::min(last, window - 1);
}

}  // namespace

Dataset gen_synthetic(const SyntheticTaskSpec& task, Index n, std::string_view split_name) {
  task.validate();
  std::vector<std::vector<double>> templates;
  for (Index k = 0; k < task.num_classes; ++k) templates.push_back(chirp_template(task, k));
  const Index cue = task.cue_frames();
  const double amp = task.amplitude(), noise = task.noise_std();

  Dataset ds;
  ds.num_classes = task.num_classes;
  const std::string purpose = "synthetic/" + std::string(split_name);
  for (Index i = 0; i < n; ++i) {
    Rng rng(task.seed, purpose, static_cast<std::uint64_t>(i));
    const Index label = static_cast<Index>(rng.uniform_int(static_cast<std::uint64_t>(task.num_classes)));
    const Index t0 = static_cast<Index>(rng.uniform_int(static_cast<std::uint64_t>(max_start(task) + 1)));
    MelSpectrogram s;
    s.n_mels = task.n_mels;
    s.n_frames = task.n_frames;
    s.sample_id = std::string(split_name) + "/" + std::to_string(i);
    s.data.resize(static_cast<std::size_t>(task.n_mels * task.n_frames));
    for (Index m = 0; m < task.n_mels; ++m)
      for (Index t = 0; t < task.n_frames; ++t) {
        double v = noise > 0 ? noise * rng.normal() : 0.0;
        if (t >= t0 && t < t0 + cue) v += amp * templates[label][(t - t0) * task.n_mels + m];
        s.data[m * task.n_frames + t] = static_cast<float>(v);
      }
    std::vector<double> row(static_cast<std::size_t>(task.num_classes), 0.0);
    row[label] = 1.0;
    ds.samples.push_back(std::move(s));
    ds.labels.push_back({label});
    ds.targets.push_back(std::move(row));
  }
  return ds;
}

Index matched_filter_classify(const SyntheticTaskSpec& task, const MelSpectrogram& spec) {
  const Index cue = task.cue_frames();
  const double amp = task.amplitude();
  double best = -std::numeric_limits<double>::infinity();
  Index best_k = 0;
  for (Index k = 0; k < task.num_classes; ++k) {
    const auto tmpl = chirp_template(task, k);
    double energy = 0;
    for (double v : tmpl) energy += v * v;
    for (Index t0 = 0; t0 + cue <= spec.n_frames; ++t0) {
      double corr = 0;
      for (Index tau = 0; tau < cue; ++tau)
        for (Index m = 0; m < spec.n_mels; ++m) corr += spec.at(m, t0 + tau) * tmpl[tau * spec.n_mels + m];
      const double score = amp * corr - 0.5 * amp * amp * energy;
      if (score > best) {
        best = score;
        best_k = k;
      }
    }
  }
  return best_k;
}

SyntheticTaskSpec parse_synthetic_spec(std::string_view text) {
  SyntheticTaskSpec t;
  if (trim(text).empty()) return t;
  for (const auto& item : split(text, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("synthetic spec item '" + item + "' is not key=value");
    const std::string key = trim(item.substr(0, eq)), value = trim(item.substr(eq + 1));
    auto integer = [&]() {
      Index v = 0;
      if (!parse_number(value, v)) throw ConfigError("synthetic spec '" + key + "' needs an integer, got '" + value + "'");
      return v;
    };
    if (key == "classes") {
      t.num_classes = integer();
    } else if (key == "n_mels") {
      t.n_mels = integer();
    } else if (key == "n_frames") {
      t.n_frames = integer();
    } else if (key == "snr_db") {
      try {
        std::size_t used = 0;
        t.snr_db = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
      } catch (const std::exception&) {
        throw ConfigError("synthetic spec 'snr_db' needs a number, got '" + value + "'");
      }
    } else if (key == "cue") {
      t.cue_position = parse_cue_position(value);
    } else if (key == "seed") {
      t.seed = static_cast<std::uint64_t>(integer());
    } else {
      throw ConfigError("unknown synthetic spec key '" + key + "'");
    }
  }
  t.validate();
  return t;
}

// ---------------------------------------------------------------------------
// Batching

BatchIterator::BatchIterator(Index dataset_size, Index batch_size, std::uint64_t seed, bool shuffle)
    : n_(dataset_size), batch_(batch_size), seed_(seed), shuffle_(shuffle) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (dataset_size < 1) throw ContractError("dataset is empty");
}

std::vector<Index> BatchIterator::order(Index e) const {
  std::vector<Index> idx(static_cast<std::size_t>(n_));
  std::iota(idx.begin(), idx.end(), Index{0});
  if (shuffle_) {
    Rng rng(seed_, "shuffle", static_cast<std::uint64_t>(e));
    for (Index i = n_ - 1; i > 0; --i) {
      const auto j = static_cast<Index>(rng.uniform_int(static_cast<std::uint64_t>(i + 1)));
      std::swap(idx[i], idx[j]);
    }
  }
  return idx;
}

std::vector<Batch> BatchIterator::epoch(Index e) const {
  const auto idx = order(e);
  std::vector<Batch> out;
  for (Index start = 0; start < n_; start += batch_) {
    Batch b;
    const Index end = std::min(n_, start + batch_);
    b.indices.assign(idx.begin() + start, idx.begin() + end);
    b.short_batch = end - start < batch_;
    out.push_back(std::move(b));
  }
  return out;
}

template <typename T>
SoftLabelBatch<T> make_batch(const Dataset& ds, const std::vector<Index>& indices) {
  if (indices.empty()) throw ContractError("make_batch: empty index list");
  const auto& first = ds.samples.at(static_cast<std::size_t>(indices[0]));
  const Index b = static_cast<Index>(indices.size()), h = first.n_mels, w = first.n_frames, k = ds.num_classes;
  SoftLabelBatch<T> out{Tensor<T>(Shape{b, 1, h, w}), Tensor<T>(Shape{b, k})};
  for (Index i = 0; i < b; ++i) {
    const auto& s = ds.samples.at(static_cast<std::size_t>(indices[i]));
    if (s.n_mels != h || s.n_frames != w) throw DimensionError("make_batch: samples differ in shape");
    for (Index j = 0; j < h * w; ++j) out.inputs[i * h * w + j] = static_cast<T>(s.data[j]);
    const auto& row = ds.targets[static_cast<std::size_t>(indices[i])];
    for (Index c = 0; c < k; ++c) out.targets[i * k + c] = static_cast<T>(row[c]);
  }
  return out;
}

template SoftLabelBatch<float> make_batch<float>(const Dataset&, const std::vector<Index>&);
template SoftLabelBatch<double> make_batch<double>(const Dataset&, const std::vector<Index>&);

}  // namespace arwkv
