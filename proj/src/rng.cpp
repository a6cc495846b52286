#include "crumb/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "crumb/common.hpp"

namespace crumb {

float Rng::normal() {
    // u1 in (0,1] so the log is finite
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    return static_cast<float>(r * std::cos(2.0 * std::numbers::pi * u2));
}

std::string Rng::save_state() const {
    std::ostringstream os;
    os << gen_;
    return os.str();
}

void Rng::restore_state(const std::string& state) {
    std::istringstream is(state);
    is >> gen_;
    if (is.fail()) throw DataError("rng: malformed engine state");
}

}  // namespace crumb
