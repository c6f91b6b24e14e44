#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "avsr/frames.hpp"
#include "avsr/rng.hpp"
#include "avsr/synth_data.hpp"

namespace avsr {

enum class NoiseCategory { babble, speech, music, natural };

inline constexpr std::array<NoiseCategory, 4> kNoiseCategories = {NoiseCategory::babble, NoiseCategory::speech,
                                                                   NoiseCategory::music, NoiseCategory::natural};

std::string to_string(NoiseCategory c);
NoiseCategory noise_category_from_string(std::string_view s);

struct NoiseSpec {
  NoiseCategory category = NoiseCategory::babble;
  double snr_db = 0.0;
};

/// Number of overlapping streams averaged into one babble stream.
inline constexpr std::size_t kBabbleStreams = 6;
/// First-order low-pass coefficient of the music-like colored noise.
inline constexpr double kMusicPole = 0.9;

/// Read-only pool of speech-like audio streams taken from training utterances.
class NoiseBank {
 public:
  struct Stream {
    std::uint64_t utterance_id = 0;
    Frames frames;
  };

  NoiseBank() = default;
  explicit NoiseBank(std::vector<Stream> streams);

  /// Draws up to `max_streams` distinct utterances from `pool` (normally the train split).
  static NoiseBank from_utterances(const std::vector<Utterance>& pool, std::size_t max_streams, Rng rng);

  std::size_t size() const { return streams_.size(); }
  bool empty() const { return streams_.empty(); }
  const Stream& stream(std::size_t i) const { return streams_.at(i); }
  bool contains(std::uint64_t utterance_id) const;

 private:
  std::vector<Stream> streams_;
};

/// Mean of squared entries.
double measure_power(const Frames& frames);

/// Noise gain alpha so that p_signal / (alpha^2 p_noise) equals 10^(snr_db / 10).
double scale_for_snr(double p_signal, double p_noise, double snr_db);

/// Tiles `noise` along time (starting at row `offset`) and crops it to `rows`.
Frames tile_crop(const Frames& noise, std::size_t rows, std::size_t offset = 0);

struct MixResult {
  Frames mixed;         ///< signal + scaled_noise
  Frames scaled_noise;  ///< alpha * tiled/cropped noise
  double alpha = 0.0;
};

/// Adds noise at an exact SNR under the mean-square power definition.
/// Shorter noise is tiled then cropped; alpha uses the cropped noise's power.
MixResult mix_components(const Frames& signal, const Frames& noise, double snr_db);
Frames mix(const Frames& signal, const Frames& noise, double snr_db);

/// Signal-to-noise ratio in dB of two component streams.
double measured_snr_db(const Frames& signal, const Frames& noise);

/// Generates a noise stream of shape [rows, cols] for one category.
/// Bank streams whose utterance id equals `exclude_id` are never used.
Frames draw_noise(const NoiseBank& bank, NoiseCategory category, std::size_t rows, std::size_t cols, Rng& rng,
                  std::optional<std::uint64_t> exclude_id = std::nullopt);

}  // namespace avsr
