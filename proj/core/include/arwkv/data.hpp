// Copyright 2026 The arwkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "arwkv/regularization.hpp"
#include "arwkv/tensor.hpp"

namespace arwkv {

/// Mel bins are rows, frames are columns: data[m * n_frames + t].
struct MelSpectrogram {
  Index n_mels = 0;
  Index n_frames = 0;
  std::vector<float> data;
  std::string sample_id;

  float at(Index m, Index t) const { return data[static_cast<std::size_t>(m * n_frames + t)]; }
  /// Throws ContractError on bad dims or non-finite values.
  void validate() const;
};

// MELF: "MELF" u32 version=1 u32 n_mels u32 n_frames, then f32 row-major data,
// all little-endian.
inline constexpr std::uint32_t kMelfVersion = 1;
inline constexpr std::size_t kMelfHeaderBytes = 16;

std::string encode_melf(const MelSpectrogram& spec);
/// Throws FormatError naming the byte offset on bad magic, version, dims,
/// truncation, trailing bytes or non-finite samples.
MelSpectrogram decode_melf(std::string_view bytes, const std::string& origin = "melf");
void write_melf(const MelSpectrogram& spec, const std::filesystem::path& path);
MelSpectrogram read_melf(const std::filesystem::path& path);

/// One labelled example: per-class probability row plus the label list it came from.
struct Dataset {
  Index num_classes = 0;
  std::vector<MelSpectrogram> samples;
  std::vector<std::vector<Index>> labels;
  std::vector<std::vector<double>> targets;  // rows sum to 1

  Index size() const { return static_cast<Index>(samples.size()); }
  /// The class with the largest target weight (first on ties).
  Index primary_label(Index i) const;
};

struct ManifestEntry {
  std::filesystem::path path;  // resolved against the manifest's directory
  std::vector<Index> labels;
  std::vector<double> weights;  // empty = uniform over labels
  Index line = 0;
};

/// Text manifest. Body lines are `relpath<TAB>l1,l2,...[<TAB>w1,w2,...]`.
/// Blank lines and lines starting with '#' are ignored. Header directives
/// start with '@':
///   @num_classes K      (required)
///   @split NAME         (optional, default "train")
///   @normalize MEAN STD (optional, applied as (x - MEAN) / STD on load)
struct Manifest {
  Index num_classes = 0;
  std::string split = "train";
  double norm_mean = 0.0;
  double norm_std = 1.0;
  std::vector<ManifestEntry> entries;
};

/// Throws FormatError naming the line on malformed input, out-of-range labels
/// or missing files.
Manifest parse_manifest(std::string_view text, const std::filesystem::path& base_dir,
                        const std::string& origin = "manifest");
Manifest load_manifest(const std::filesystem::path& path);
/// Reads every MELF the manifest lists and applies the normalization.
Dataset load_dataset(const Manifest& manifest);

enum class CuePosition { Anywhere, Early10Pct };
std::string_view to_string(CuePosition c);
CuePosition parse_cue_position(std::string_view s);

/// Synthetic classification task: unit Gaussian noise plus one class chirp.
///
/// Class k is a Gaussian ridge (sigma 1.5 bins) centred on mel bin
/// (k + 0.5) * n_mels / K that drifts ((k mod 3) - 1) * 0.75 bins per frame,
/// lasting max(3, n_frames / 10) frames at amplitude 10^(snr_db / 20).
/// An infinite snr_db means no noise and unit amplitude. With
/// Early10Pct the cue starts within the first 10% of frames.
struct SyntheticTaskSpec {
  Index num_classes = 10;
  Index n_mels = 32;
  Index n_frames = 64;
  double snr_db = 10.0;
  CuePosition cue_position = CuePosition::Anywhere;
  std::uint64_t seed = 0;

  Index cue_frames() const;
  double amplitude() const;
  double noise_std() const;
  void validate() const;
};

/// cue_frames() x n_mels template of class k (frame-major: tmpl[tau * n_mels + m]).
std::vector<double> chirp_template(const SyntheticTaskSpec& task, Index k);

/// `n` samples from the split's own stream; labels are uniform over classes.
Dataset gen_synthetic(const SyntheticTaskSpec& task, Index n, std::string_view split = "train");

/// Maximum-likelihood classifier that knows the templates and amplitude:
/// argmax over (class, start frame) of <x, A t> - |A t|^2 / 2.
Index matched_filter_classify(const SyntheticTaskSpec& task, const MelSpectrogram& spec);

/// Parses "key=value,key=value" (keys: classes, n_mels, n_frames, snr_db, cue, seed).
SyntheticTaskSpec parse_synthetic_spec(std::string_view text);

struct Batch {
  std::vector<Index> indices;
  bool short_batch = false;  // the final, smaller batch of an epoch
};

/// Deterministic per-epoch shuffling: epoch e is a Fisher-Yates permutation
/// drawn from the ("shuffle", e) substream of `seed`. The last batch is kept
/// even when short.
class BatchIterator {
 public:
  BatchIterator(Index dataset_size, Index batch_size, std::uint64_t seed, bool shuffle = true);

  std::vector<Batch> epoch(Index e) const;
  std::vector<Index> order(Index e) const;
  Index batches_per_epoch() const { return (n_ + batch_ - 1) / batch_; }

 private:
  Index n_, batch_;
  std::uint64_t seed_;
  bool shuffle_;
};

/// Stacks the selected samples into inputs [B,1,n_mels,n_frames] and targets [B,K].
template <typename T>
SoftLabelBatch<T> make_batch(const Dataset& ds, const std::vector<Index>& indices);

}  // namespace arwkv
