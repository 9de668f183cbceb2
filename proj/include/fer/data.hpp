#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "fer/errors.hpp"
#include "fer/nn.hpp"
#include "fer/rng.hpp"
#include "fer/tensor.hpp"

namespace fer {

inline constexpr std::size_t kImageSize = 48;
inline constexpr std::size_t kCropSize = 40;
inline constexpr std::size_t kPixelCount = kImageSize * kImageSize;
inline constexpr int kNumClasses = 7;

/// Dataset class-index convention: 0 angry, 1 disgust, 2 fear, 3 happy,
/// 4 sad, 5 surprise, 6 neutral.
inline const char* class_name(int label) {
  static const char* names[kNumClasses] = {"angry",    "disgust", "fear",
                                           "happy",    "sad",     "surprise",
                                           "neutral"};
  return (label >= 0 && label < kNumClasses) ? names[label] : "?";
}

enum class Split : std::uint8_t { Training = 0, PublicTest = 1, PrivateTest = 2 };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::Training: return "Training";
    case Split::PublicTest: return "PublicTest";
    case Split::PrivateTest: return "PrivateTest";
  }
  return "?";
}

struct FerRecord {
  std::uint8_t label = 0;                       // 0..6
  std::array<std::uint8_t, kPixelCount> pixels{};  // 48x48 grayscale, 0..255
  Split split = Split::Training;
};

struct ParseResult {
  std::vector<FerRecord> records;
  std::array<std::size_t, 3> split_counts{};  // Training, PublicTest, PrivateTest
  std::size_t total = 0;
};

/// The file the usual distribution ships has 35887 rows while 35888 is the
/// commonly cited image count; flag that one-off mismatch for the caller.
inline std::optional<std::string> official_count_note(std::size_t total) {
  if (total == 35887) {
    return "dataset has 35887 rows; the commonly cited count is 35888";
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// CSV ingestion. Header `emotion,pixels,Usage`, pixels space-separated.
// ---------------------------------------------------------------------------

namespace data_detail {

inline bool parse_int_field(const char*& p, const char* end, long& out) {
  bool any = false;
  long v = 0;
  bool neg = false;
  if (p < end && *p == '-') {
    neg = true;
    ++p;
  }
  while (p < end && *p >= '0' && *p <= '9') {
    v = v * 10 + (*p - '0');
    ++p;
    any = true;
  }
  out = neg ? -v : v;
  return any;
}

}  // namespace data_detail

inline ParseResult parse_csv(std::istream& in) {
  ParseResult result;
  std::string line;
  std::size_t line_no = 0;

  if (!std::getline(in, line)) throw ParseError("empty input", 1);
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "emotion,pixels,Usage") {
    throw ParseError("expected header 'emotion,pixels,Usage'", line_no);
  }

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;

    const char* p = line.data();
    const char* end = p + line.size();

    long label;
    if (!data_detail::parse_int_field(p, end, label) || p >= end || *p != ',') {
      throw ParseError("malformed emotion field", line_no);
    }
    if (label < 0 || label >= kNumClasses) {
      throw ParseError("label " + std::to_string(label) + " outside [0,6]",
                       line_no);
    }
    ++p;  // comma

    FerRecord rec;
    rec.label = static_cast<std::uint8_t>(label);
    std::size_t npix = 0;
    while (p < end && *p != ',') {
      long v;
      if (!data_detail::parse_int_field(p, end, v)) {
        throw ParseError("non-integer pixel value", line_no);
      }
      if (v < 0 || v > 255) {
        throw ParseError("pixel value " + std::to_string(v) +
                             " outside [0,255]",
                         line_no);
      }
      if (npix >= kPixelCount) {
        throw ParseError("more than 2304 pixel values", line_no);
      }
      rec.pixels[npix++] = static_cast<std::uint8_t>(v);
      if (p < end && *p == ' ') ++p;
    }
    if (npix != kPixelCount) {
      throw ParseError("expected 2304 pixel values, found " +
                           std::to_string(npix),
                       line_no);
    }
    if (p >= end || *p != ',') {
      throw ParseError("missing Usage field", line_no);
    }
    ++p;
    const std::string usage(p, end);
    if (usage == "Training") rec.split = Split::Training;
    else if (usage == "PublicTest") rec.split = Split::PublicTest;
    else if (usage == "PrivateTest") rec.split = Split::PrivateTest;
    else throw ParseError("unknown Usage '" + usage + "'", line_no);

    ++result.split_counts[static_cast<std::size_t>(rec.split)];
    result.records.push_back(rec);
  }
  result.total = result.records.size();
  return result;
}

inline void write_csv(std::ostream& out, const std::vector<FerRecord>& records) {
  out << "emotion,pixels,Usage\n";
  std::string buf;
  for (const auto& rec : records) {
    buf.clear();
    buf += std::to_string(static_cast<int>(rec.label));
    buf += ',';
    for (std::size_t i = 0; i < kPixelCount; ++i) {
      if (i) buf += ' ';
      buf += std::to_string(static_cast<int>(rec.pixels[i]));
    }
    buf += ',';
    buf += split_name(rec.split);
    buf += '\n';
    out << buf;
  }
}

/// Per-class per-split counts, [class][split].
inline std::array<std::array<std::size_t, 3>, kNumClasses> class_split_counts(
    const std::vector<FerRecord>& records) {
  std::array<std::array<std::size_t, 3>, kNumClasses> counts{};
  for (const auto& r : records) {
    ++counts[r.label][static_cast<std::size_t>(r.split)];
  }
  return counts;
}

/// Relabels the validation split as Training; the test split is untouched.
/// Idempotent.
inline std::vector<FerRecord> merge_train_val(std::vector<FerRecord> records,
                                              Split val_split) {
  for (auto& r : records) {
    if (r.split == val_split) r.split = Split::Training;
  }
  return records;
}

// ---------------------------------------------------------------------------
// Geometric transforms on 48x48 images. Raw pixel scale (0..255) as reals;
// bilinear sampling with zero fill outside the frame, which is exact at
// integer grid positions.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> image_from_record(const FerRecord& rec) {
  Tensor<T> img({kImageSize, kImageSize});
  for (std::size_t i = 0; i < kPixelCount; ++i) {
    img[i] = static_cast<T>(rec.pixels[i]);
  }
  return img;
}

template <typename T>
T bilinear_at(const Tensor<T>& img, double y, double x) {
  const auto h = static_cast<std::ptrdiff_t>(img.shape()[0]);
  const auto w = static_cast<std::ptrdiff_t>(img.shape()[1]);
  const double fy = std::floor(y), fx = std::floor(x);
  const auto y0 = static_cast<std::ptrdiff_t>(fy);
  const auto x0 = static_cast<std::ptrdiff_t>(fx);
  const double wy = y - fy, wx = x - fx;

  auto tap = [&](std::ptrdiff_t yy, std::ptrdiff_t xx) -> double {
    if (yy < 0 || yy >= h || xx < 0 || xx >= w) return 0.0;
    return static_cast<double>(
        img[static_cast<std::size_t>(yy) * static_cast<std::size_t>(w) +
            static_cast<std::size_t>(xx)]);
  };

  const double v = (1 - wy) * ((1 - wx) * tap(y0, x0) + wx * tap(y0, x0 + 1)) +
                   wy * ((1 - wx) * tap(y0 + 1, x0) + wx * tap(y0 + 1, x0 + 1));
  return static_cast<T>(v);
}

/// Scales image content about the center by `factor` (>1 zooms in), then
/// implicitly center-crops / zero-pads back to the original frame.
template <typename T>
Tensor<T> rescale_image(const Tensor<T>& img, double factor) {
  const std::size_t h = img.shape()[0], w = img.shape()[1];
  const double cy = (static_cast<double>(h) - 1) / 2;
  const double cx = (static_cast<double>(w) - 1) / 2;
  Tensor<T> out({h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double sy = cy + (static_cast<double>(y) - cy) / factor;
      const double sx = cx + (static_cast<double>(x) - cx) / factor;
      out[y * w + x] = bilinear_at(img, sy, sx);
    }
  }
  return out;
}

/// Translates content by (dx right, dy down) with zero fill.
template <typename T>
Tensor<T> shift_image(const Tensor<T>& img, double dx, double dy) {
  const std::size_t h = img.shape()[0], w = img.shape()[1];
  Tensor<T> out({h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      out[y * w + x] = bilinear_at(img, static_cast<double>(y) - dy,
                                   static_cast<double>(x) - dx);
    }
  }
  return out;
}

/// Rotates content by `degrees` about the center (positive is
/// counterclockwise with y pointing down), bilinear, zero fill.
template <typename T>
Tensor<T> rotate_image(const Tensor<T>& img, double degrees) {
  const std::size_t h = img.shape()[0], w = img.shape()[1];
  const double rad = degrees * 3.14159265358979323846 / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);
  const double cy = (static_cast<double>(h) - 1) / 2;
  const double cx = (static_cast<double>(w) - 1) / 2;
  Tensor<T> out({h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double vy = static_cast<double>(y) - cy;
      const double vx = static_cast<double>(x) - cx;
      const double sy = cy + vy * c - vx * s;
      const double sx = cx + vy * s + vx * c;
      out[y * w + x] = bilinear_at(img, sy, sx);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation pipeline
// ---------------------------------------------------------------------------

struct AugmentConfig {
  double transform_prob = 0.5;  // per-transform coin
  double rescale_frac = 0.2;    // factor drawn from U(1-f, 1+f)
  double shift_frac = 0.2;      // shift drawn from U(-f*size, f*size) per axis
  double rotate_deg = 10.0;     // angle drawn from U(-deg, +deg)
  double erase_prob = 0.5;
  double erase_area_lo = 0.02, erase_area_hi = 0.33;
  double erase_aspect_lo = 0.3, erase_aspect_hi = 3.3;

  void validate() const {
    if (transform_prob < 0 || transform_prob > 1 || erase_prob < 0 ||
        erase_prob > 1) {
      throw ConfigError("augmentation probabilities must be in [0,1]");
    }
    if (erase_area_lo > erase_area_hi || erase_aspect_lo > erase_aspect_hi) {
      throw ConfigError("erase ranges must be ordered lo <= hi");
    }
  }
};

/// Applies, independently with probability transform_prob each and in this
/// fixed order: rescale, shift, rotate. Draw order per transform is coin
/// first, parameters only when the coin lands.
template <typename T>
Tensor<T> augment(const Tensor<T>& img, const AugmentConfig& cfg,
                  SeededRng& rng) {
  Tensor<T> out = img;
  const double size = static_cast<double>(img.shape()[0]);
  if (rng.bernoulli(cfg.transform_prob)) {
    const double f = rng.uniform(1.0 - cfg.rescale_frac, 1.0 + cfg.rescale_frac);
    out = rescale_image(out, f);
  }
  if (rng.bernoulli(cfg.transform_prob)) {
    const double lim = cfg.shift_frac * size;
    const double dx = rng.uniform(-lim, lim);
    const double dy = rng.uniform(-lim, lim);
    out = shift_image(out, dx, dy);
  }
  if (rng.bernoulli(cfg.transform_prob)) {
    const double a = rng.uniform(-cfg.rotate_deg, cfg.rotate_deg);
    out = rotate_image(out, a);
  }
  return out;
}

/// The five 40x40 crops of a 48x48 image at offsets (top,left) =
/// (0,0), (0,8), (8,0), (8,8), (4,4), followed by the horizontal mirror of
/// each in the same order; crop 5 is the mirror of crop 0.
template <typename T>
std::array<Tensor<T>, 10> ten_crop(const Tensor<T>& img) {
  if (img.shape() != std::vector<std::size_t>{kImageSize, kImageSize}) {
    throw ShapeError("ten_crop: input must be 48x48");
  }
  static constexpr std::array<std::pair<std::size_t, std::size_t>, 5> offsets{
      {{0, 0}, {0, 8}, {8, 0}, {8, 8}, {4, 4}}};
  std::array<Tensor<T>, 10> crops;
  for (std::size_t k = 0; k < 5; ++k) {
    const auto [top, left] = offsets[k];
    Tensor<T> crop({kCropSize, kCropSize});
    Tensor<T> mirror({kCropSize, kCropSize});
    for (std::size_t y = 0; y < kCropSize; ++y) {
      for (std::size_t x = 0; x < kCropSize; ++x) {
        const T v = img[(top + y) * kImageSize + (left + x)];
        crop[y * kCropSize + x] = v;
        mirror[y * kCropSize + (kCropSize - 1 - x)] = v;
      }
    }
    crops[k] = std::move(crop);
    crops[k + 5] = std::move(mirror);
  }
  return crops;
}

/// With probability erase_prob, zeroes a rectangle whose area fraction and
/// aspect ratio are drawn uniformly from the configured ranges, clipped to
/// the crop bounds. Draw order: coin, area, aspect, top, left.
template <typename T>
void random_erase(Tensor<T>& crop, const AugmentConfig& cfg, SeededRng& rng) {
  if (!rng.bernoulli(cfg.erase_prob)) return;
  const std::size_t h = crop.shape()[0], w = crop.shape()[1];
  const double area = static_cast<double>(h * w);
  const double target = rng.uniform(cfg.erase_area_lo, cfg.erase_area_hi) * area;
  const double aspect = rng.uniform(cfg.erase_aspect_lo, cfg.erase_aspect_hi);
  std::size_t eh = static_cast<std::size_t>(std::llround(std::sqrt(target * aspect)));
  std::size_t ew = static_cast<std::size_t>(std::llround(std::sqrt(target / aspect)));
  eh = std::min(std::max<std::size_t>(eh, 1), h);
  ew = std::min(std::max<std::size_t>(ew, 1), w);
  const std::size_t top = rng.next_below(h - eh + 1);
  const std::size_t left = rng.next_below(w - ew + 1);
  for (std::size_t y = top; y < top + eh; ++y) {
    for (std::size_t x = left; x < left + ew; ++x) {
      crop[y * w + x] = T{0};
    }
  }
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

enum class TrainCrops { Ten, RandomOne };

template <typename T>
struct Batch {
  Tensor<T> images;             // [k,1,40,40], values in [0,1]
  std::vector<int> labels;      // per crop
  std::vector<int> record_ids;  // per crop: source record index
  std::vector<int> crop_ids;    // per crop: 0..9
};

// Substream tags for the per-purpose RNG derivations.
inline constexpr std::uint64_t kStreamShuffle = 0xA1;
inline constexpr std::uint64_t kStreamAugment = 0xA2;
inline constexpr std::uint64_t kStreamDropout = 0xA3;

/// Deterministic batch generator. Train mode shuffles per epoch and runs
/// augment -> ten-crop -> per-crop random erase -> normalize, with every
/// random draw coming from a per-(epoch, record) substream so the pipeline
/// is a pure function of (records, seed, epoch). Eval mode is unshuffled
/// and un-augmented, and a record's ten crops stay contiguous for
/// prediction averaging. batch_size counts source images, so a full train
/// batch holds 10 * batch_size crops.
template <typename T>
class BatchStream {
 public:
  BatchStream(const std::vector<FerRecord>* records, std::vector<int> indices,
              const AugmentConfig& cfg, std::uint64_t seed, std::uint64_t epoch,
              Mode mode, std::size_t batch_size,
              TrainCrops train_crops = TrainCrops::Ten)
      : records_(records),
        indices_(std::move(indices)),
        cfg_(cfg),
        seed_(seed),
        epoch_(epoch),
        mode_(mode),
        batch_size_(batch_size),
        train_crops_(train_crops) {
    if (indices_.empty()) throw DataError("batch stream over an empty record set");
    if (batch_size_ == 0) throw ConfigError("batch_size must be >= 1");
    if (mode_ == Mode::Train) {
      SeededRng shuffle_rng(seed_, substream(kStreamShuffle, epoch_));
      for (std::size_t i = indices_.size(); i > 1; --i) {
        const std::size_t j = shuffle_rng.next_below(i);
        std::swap(indices_[i - 1], indices_[j]);
      }
    }
  }

  std::optional<Batch<T>> next() {
    if (cursor_ >= indices_.size()) return std::nullopt;
    const std::size_t take = std::min(batch_size_, indices_.size() - cursor_);
    const std::size_t crops_per_image =
        (mode_ == Mode::Train && train_crops_ == TrainCrops::RandomOne) ? 1 : 10;

    Batch<T> batch;
    batch.images = Tensor<T>({take * crops_per_image, 1, kCropSize, kCropSize});
    batch.labels.reserve(take * crops_per_image);
    batch.record_ids.reserve(take * crops_per_image);
    batch.crop_ids.reserve(take * crops_per_image);

    std::size_t slot = 0;
    for (std::size_t i = 0; i < take; ++i) {
      const int rid = indices_[cursor_ + i];
      const FerRecord& rec = (*records_)[static_cast<std::size_t>(rid)];
      auto img = image_from_record<T>(rec);

      if (mode_ == Mode::Train) {
        SeededRng rng(seed_, substream(kStreamAugment, epoch_,
                                       static_cast<std::uint64_t>(rid)));
        img = augment(img, cfg_, rng);
        auto crops = ten_crop(img);
        if (train_crops_ == TrainCrops::RandomOne) {
          const std::size_t pick = rng.next_below(10);
          random_erase(crops[pick], cfg_, rng);
          emit_crop(batch, crops[pick], rec, rid, static_cast<int>(pick), slot++);
        } else {
          for (std::size_t k = 0; k < 10; ++k) {
            random_erase(crops[k], cfg_, rng);
            emit_crop(batch, crops[k], rec, rid, static_cast<int>(k), slot++);
          }
        }
      } else {
        auto crops = ten_crop(img);
        for (std::size_t k = 0; k < 10; ++k) {
          emit_crop(batch, crops[k], rec, rid, static_cast<int>(k), slot++);
        }
      }
    }
    cursor_ += take;
    return batch;
  }

  void reset() { cursor_ = 0; }

 private:
  void emit_crop(Batch<T>& batch, const Tensor<T>& crop, const FerRecord& rec,
                 int rid, int crop_id, std::size_t slot) {
    T* dst = batch.images.data() + slot * kCropSize * kCropSize;
    const T inv = static_cast<T>(1.0 / 255.0);
    for (std::size_t i = 0; i < kCropSize * kCropSize; ++i) {
      dst[i] = crop[i] * inv;
    }
    batch.labels.push_back(static_cast<int>(rec.label));
    batch.record_ids.push_back(rid);
    batch.crop_ids.push_back(crop_id);
  }

  const std::vector<FerRecord>* records_;
  std::vector<int> indices_;
  AugmentConfig cfg_;
  std::uint64_t seed_;
  std::uint64_t epoch_;
  Mode mode_;
  std::size_t batch_size_;
  TrainCrops train_crops_;
  std::size_t cursor_ = 0;
};

inline std::vector<int> split_indices(const std::vector<FerRecord>& records,
                                      Split split, int limit_per_class = 0) {
  std::vector<int> out;
  std::array<int, kNumClasses> taken{};
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].split != split) continue;
    if (limit_per_class > 0 && taken[records[i].label] >= limit_per_class) {
      continue;
    }
    ++taken[records[i].label];
    out.push_back(static_cast<int>(i));
  }
  return out;
}

/// Materializes a whole epoch; convenience for tests and tiny runs.
template <typename T>
std::vector<Batch<T>> make_batches(const std::vector<FerRecord>& records,
                                   const std::vector<int>& indices,
                                   const AugmentConfig& cfg, std::uint64_t seed,
                                   std::uint64_t epoch, Mode mode,
                                   std::size_t batch_size,
                                   TrainCrops train_crops = TrainCrops::Ten) {
  BatchStream<T> stream(&records, indices, cfg, seed, epoch, mode, batch_size,
                        train_crops);
  std::vector<Batch<T>> out;
  while (auto b = stream.next()) out.push_back(std::move(*b));
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic data, for demos and dataset-free testing
// ---------------------------------------------------------------------------

enum class SynthStyle {
  Learnable,  // class-dependent frequency patterns, learnable from crops
  Noise,      // labels independent of pixels, for chance-level baselines
};

inline std::vector<FerRecord> make_synthetic_records(
    int per_class_train, int per_class_val, int per_class_test,
    std::uint64_t seed, SynthStyle style = SynthStyle::Learnable) {
  std::vector<FerRecord> records;
  const double pi = 3.14159265358979323846;
  auto emit = [&](Split split, int per_class) {
    for (int cls = 0; cls < kNumClasses; ++cls) {
      for (int k = 0; k < per_class; ++k) {
        SeededRng rng(seed, substream(static_cast<std::uint64_t>(split),
                                      static_cast<std::uint64_t>(cls),
                                      static_cast<std::uint64_t>(k)));
        FerRecord rec;
        rec.split = split;
        rec.label = static_cast<std::uint8_t>(cls);
        for (std::size_t y = 0; y < kImageSize; ++y) {
          for (std::size_t x = 0; x < kImageSize; ++x) {
            double v;
            if (style == SynthStyle::Learnable) {
              // class-specific spatial frequency, mirror-symmetric in x so
              // flipped crops stay class-consistent
              const double fx = std::cos(2 * pi * (cls + 1) *
                                         (static_cast<double>(x) - 23.5) / 48.0);
              const double fy = std::cos(2 * pi * (cls + 1) *
                                         (static_cast<double>(y) - 23.5) / 48.0);
              v = 127.0 + 55.0 * fx * fy + rng.uniform(-12.0, 12.0);
            } else {
              v = rng.uniform(0.0, 255.0);
            }
            rec.pixels[y * kImageSize + x] = static_cast<std::uint8_t>(
                std::min(255.0, std::max(0.0, std::floor(v + 0.5))));
          }
        }
        records.push_back(rec);
      }
    }
  };
  emit(Split::Training, per_class_train);
  emit(Split::PublicTest, per_class_val);
  emit(Split::PrivateTest, per_class_test);
  return records;
}

}  // namespace fer
