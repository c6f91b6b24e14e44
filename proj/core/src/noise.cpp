#include "avsr/noise.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

#include "avsr/error.hpp"

namespace avsr {

std::string to_string(NoiseCategory c) {
  switch (c) {
    case NoiseCategory::babble:
      return "babble";
    case NoiseCategory::speech:
      return "speech";
    case NoiseCategory::music:
      return "music";
    case NoiseCategory::natural:
      return "natural";
  }
  return "?";
}

NoiseCategory noise_category_from_string(std::string_view s) {
  std::string lower;
  for (const char c : s) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  for (const auto c : kNoiseCategories) {
    if (to_string(c) == lower) return c;
  }
  throw ConfigError("noise category: expected babble|speech|music|natural, got '" + std::string(s) + "'");
}

NoiseBank::NoiseBank(std::vector<Stream> streams) : streams_(std::move(streams)) {
  for (const auto& s : streams_) {
    if (s.frames.empty()) throw ShapeError("noise bank: empty stream");
    if (s.frames.cols != streams_.front().frames.cols) throw ShapeError("noise bank: streams differ in feature dim");
  }
}

NoiseBank NoiseBank::from_utterances(const std::vector<Utterance>& pool, std::size_t max_streams, Rng rng) {
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t n = std::min(max_streams, pool.size());
  // Partial Fisher-Yates: the first n entries form a uniform sample without replacement.
  for (std::size_t i = 0; i < n; ++i) std::swap(order[i], order[i + rng.below(order.size() - i)]);
  std::vector<Stream> streams;
  for (std::size_t i = 0; i < n; ++i) streams.push_back({pool[order[i]].id, pool[order[i]].audio});
  return NoiseBank(std::move(streams));
}

bool NoiseBank::contains(std::uint64_t utterance_id) const {
  return std::any_of(streams_.begin(), streams_.end(), [&](const Stream& s) { return s.utterance_id == utterance_id; });
}

double measure_power(const Frames& frames) {
  if (frames.empty()) throw ShapeError("measure_power: empty input");
  double acc = 0.0;
  for (const double v : frames.data) acc += v * v;
  return acc / static_cast<double>(frames.data.size());
}

double scale_for_snr(double p_signal, double p_noise, double snr_db) {
  if (!(p_signal > 0.0) || !(p_noise > 0.0)) {
    throw NumericError("scale_for_snr: signal and noise power must be positive");
  }
  if (!std::isfinite(snr_db)) throw NumericError("scale_for_snr: snr must be finite");
  return std::sqrt(p_signal / (p_noise * std::pow(10.0, snr_db / 10.0)));
}

Frames tile_crop(const Frames& noise, std::size_t rows, std::size_t offset) {
  if (noise.empty()) throw ShapeError("tile_crop: empty noise");
  Frames out(rows, noise.cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto src = noise.row((offset + r) % noise.rows);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

MixResult mix_components(const Frames& signal, const Frames& noise, double snr_db) {
  if (signal.cols != noise.cols) {
    throw ShapeError("mix: signal has " + std::to_string(signal.cols) + " features, noise " +
                     std::to_string(noise.cols));
  }
  MixResult r;
  r.scaled_noise = tile_crop(noise, signal.rows);
  r.alpha = scale_for_snr(measure_power(signal), measure_power(r.scaled_noise), snr_db);
  r.mixed = signal;
  for (std::size_t i = 0; i < r.mixed.data.size(); ++i) {
    r.scaled_noise.data[i] *= r.alpha;
    r.mixed.data[i] += r.scaled_noise.data[i];
  }
  return r;
}

Frames mix(const Frames& signal, const Frames& noise, double snr_db) {
  return mix_components(signal, noise, snr_db).mixed;
}

double measured_snr_db(const Frames& signal, const Frames& noise) {
  return 10.0 * std::log10(measure_power(signal) / measure_power(noise));
}

Frames draw_noise(const NoiseBank& bank, NoiseCategory category, std::size_t rows, std::size_t cols, Rng& rng,
                  std::optional<std::uint64_t> exclude_id) {
  if (rows == 0 || cols == 0) throw ShapeError("draw_noise: empty request");
  auto eligible = [&] {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < bank.size(); ++i) {
      if (!exclude_id || bank.stream(i).utterance_id != *exclude_id) idx.push_back(i);
    }
    return idx;
  };
  auto segment = [&](std::size_t stream_index) {
    const Frames& src = bank.stream(stream_index).frames;
    if (src.cols != cols) throw ShapeError("draw_noise: bank feature dim does not match request");
    return tile_crop(src, rows, rng.below(src.rows));
  };

  switch (category) {
    case NoiseCategory::speech: {
      const auto idx = eligible();
      if (idx.empty()) throw ConfigError("draw_noise: noise bank is empty");
      return segment(idx[rng.below(idx.size())]);
    }
    case NoiseCategory::babble: {
      auto idx = eligible();
      if (idx.size() < kBabbleStreams) {
        throw ConfigError("draw_noise: babble needs " + std::to_string(kBabbleStreams) + " distinct streams, bank has " +
                          std::to_string(idx.size()));
      }
      Frames out(rows, cols);
      for (std::size_t k = 0; k < kBabbleStreams; ++k) {
        std::swap(idx[k], idx[k + rng.below(idx.size() - k)]);
        const Frames s = segment(idx[k]);
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += s.data[i];
      }
      for (auto& v : out.data) v /= static_cast<double>(kBabbleStreams);
      return out;
    }
    case NoiseCategory::natural: {
      Frames out(rows, cols);
      for (auto& v : out.data) v = rng.normal();
      return out;
    }
    case NoiseCategory::music: {
      Frames out(rows, cols);
      // AR(1) along time per feature, started from its stationary distribution.
      const double stationary = 1.0 / std::sqrt(1.0 - kMusicPole * kMusicPole);
      for (std::size_t c = 0; c < cols; ++c) out(0, c) = stationary * rng.normal();
      for (std::size_t r = 1; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) out(r, c) = kMusicPole * out(r - 1, c) + rng.normal();
      }
      const double p = measure_power(out);
      const double g = 1.0 / std::sqrt(p);
      for (auto& v : out.data) v *= g;
      return out;
    }
  }
  throw ConfigError("draw_noise: unknown category");
}

}  // namespace avsr
