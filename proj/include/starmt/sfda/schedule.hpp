#pragma once

namespace starmt::sfda {

enum class Stage { TRS, SRS };

// Alternation with period 2*tau: TRS occupies [2k*tau, 2k*tau + tau), SRS the
// other half. Equivalently: TRS iff floor(iteration / tau) is even.
Stage stage_of(long iteration, int tau);

const char* stage_name(Stage s);

} // namespace starmt::sfda
