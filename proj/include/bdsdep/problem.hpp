#pragma once

#include <functional>
#include <optional>
#include <string>

#include "bdsdep/drivers.hpp"
#include "bdsdep/forward.hpp"

namespace bdsdep {

/// Everything needed to run the two-level solver: forward dynamics, driver,
/// terminal functional and horizon. `analytic`, when set, is the known
/// deterministic solution t -> P_t.
struct Problem {
    std::string name;
    ForwardModel forward;
    DriverSpec driver;
    TerminalSpec terminal;
    double T = 1.0;
    std::function<double(double)> analytic;
    std::optional<int> mollifyOrder;
};

}  // namespace bdsdep
