#pragma once

#include <string>
#include <string_view>

#include "avsr/model.hpp"
#include "avsr/rng.hpp"

namespace avsr {

/// Which encoder outputs reach the decoder for one example.
enum class Modality { AV, A, V };

std::string to_string(Modality m);
/// Accepts "av", "a", "v" (any case).
Modality modality_from_string(std::string_view s);

/// Per-example probabilities of keeping both streams (p_av), audio only
/// (p_a, video zeroed) or video only (p_v, audio zeroed).
struct DropoutPolicy {
  double p_av = 0.5;
  double p_a = 0.0;
  double p_v = 0.5;

  /// Each probability in [0, 1], sum equal to 1 within 1e-12; ConfigError otherwise.
  void validate() const;
  friend bool operator==(const DropoutPolicy&, const DropoutPolicy&) = default;
};

/// Draws one selection using exactly one uniform draw from `rng`.
Modality sample_selection(const DropoutPolicy& policy, Rng& rng);

/// Replaces the dropped stream by zeros of identical shape. The zero tensor has
/// no graph history, so nothing flows back into the dropped encoder.
EncodedStreams apply_selection(Modality selection, const EncodedStreams& streams);

/// Encodes the streams kept by `selection` and applies it. The dropped encoder
/// is not run; its output is replaced by zeros of the shape it would have had.
/// Models without gated layers never read video, so it is not encoded either.
EncodedStreams encode_with_selection(const AvsrModel& model, const Frames& audio, const Frames& video,
                                     Modality selection);

}  // namespace avsr
