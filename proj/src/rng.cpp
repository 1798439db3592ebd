#include "cnsnet/rng.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace cnsnet {

double Rng::uniform() {
    // 53 random mantissa bits, exact in double.
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

int Rng::uniform_int(int lo, int hi) {
    if (hi < lo) throw std::invalid_argument("Rng::uniform_int: hi < lo");
    const std::uint64_t span = static_cast<std::uint64_t>(hi) - static_cast<std::uint64_t>(lo) + 1;
    return lo + static_cast<int>(next_u64() % span);
}

double Rng::normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

std::string Rng::state_string() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
}

void Rng::set_state(const std::string& s) {
    std::istringstream is(s);
    is >> engine_;
    if (!is) throw std::runtime_error("Rng::set_state: malformed state string");
}

}  // namespace cnsnet
