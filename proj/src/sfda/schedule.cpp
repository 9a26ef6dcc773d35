#include "starmt/sfda/schedule.hpp"

#include <stdexcept>

namespace starmt::sfda {

Stage stage_of(long iteration, int tau) {
    if (iteration < 0) throw std::invalid_argument("stage_of: iteration must be >= 0");
    if (tau < 1) throw std::invalid_argument("stage_of: tau must be >= 1");
    return (iteration / tau) % 2 == 0 ? Stage::TRS : Stage::SRS;
}

const char* stage_name(Stage s) { return s == Stage::TRS ? "trs" : "srs"; }

} // namespace starmt::sfda
