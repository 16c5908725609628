#pragma once

#include "convsense/types.hpp"

#include <vector>

namespace convsense {

// Deterministically generates one group's session from (spec, group_index).
// Class structure:
//   conversation     — two alternating "speakers" (distinct fundamentals,
//                      1-4 s turns); gesture bursts on 3 IMU channels during
//                      the watch-wearer's turns.
//   other_speech     — single-fundamental continuous bursts, sparse gestures.
//   background_noise — broadband noise, optionally a music-like periodic
//                      tone; near-static IMU.
// White noise is added to audio at spec.audio_snr_db; IMU baseline noise has
// sigma 0.05 g. Groups past the first ceil(n/2) are tagged semi_naturalistic
// and get 6 dB less audio SNR.
Session synth_session(const SynthSpec& spec, int group_index = 0);

// All n_groups sessions of a synthetic dataset.
std::vector<Session> synth_dataset(const SynthSpec& spec);

}  // namespace convsense
