#include "avsr/fusion_dropout.hpp"

#include <cctype>
#include <cmath>

#include "avsr/error.hpp"

namespace avsr {

std::string to_string(Modality m) {
  switch (m) {
    case Modality::AV:
      return "av";
    case Modality::A:
      return "a";
    case Modality::V:
      return "v";
  }
  return "?";
}

Modality modality_from_string(std::string_view s) {
  std::string lower;
  for (const char c : s) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (lower == "av") return Modality::AV;
  if (lower == "a") return Modality::A;
  if (lower == "v") return Modality::V;
  throw ConfigError("mode: expected one of av|a|v, got '" + std::string(s) + "'");
}

void DropoutPolicy::validate() const {
  for (const double p : {p_av, p_a, p_v}) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("dropout policy: probabilities must lie in [0, 1]");
  }
  if (std::abs(p_av + p_a + p_v - 1.0) > 1e-12) throw ConfigError("dropout policy: p_av + p_a + p_v must equal 1");
}

Modality sample_selection(const DropoutPolicy& policy, Rng& rng) {
  policy.validate();
  const double u = rng.uniform();
  if (u < policy.p_av) return Modality::AV;
  if (u < policy.p_av + policy.p_a) return Modality::A;
  // Guard the p_v == 0 edge against rounding in the cumulative sum.
  if (policy.p_v == 0.0) return policy.p_a > 0.0 ? Modality::A : Modality::AV;
  return Modality::V;
}

EncodedStreams apply_selection(Modality selection, const EncodedStreams& streams) {
  switch (selection) {
    case Modality::AV:
      return streams;
    case Modality::A:
      return {streams.audio, Tensor::zeros(streams.video.shape())};
    case Modality::V:
      return {Tensor::zeros(streams.audio.shape()), streams.video};
  }
  return streams;
}

EncodedStreams encode_with_selection(const AvsrModel& model, const Frames& audio, const Frames& video,
                                     Modality selection) {
  const std::size_t d = model.config().d_model;
  EncodedStreams s;
  s.audio = selection == Modality::V ? Tensor::zeros({audio.rows, d}) : model.encode_audio(audio);
  s.video = (!model.has_gated_layers() || selection == Modality::A) ? Tensor::zeros({video.rows, d})
                                                                     : model.encode_video(video);
  return apply_selection(selection, s);
}

}  // namespace avsr
