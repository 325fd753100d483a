#pragma once

// Umbrella header for the ldosim library.

#include "ldosim/analyses.hpp"
#include "ldosim/circuit.hpp"
#include "ldosim/devices.hpp"
#include "ldosim/engine.hpp"
#include "ldosim/ldobench.hpp"
#include "ldosim/metrics.hpp"
#include "ldosim/netlist.hpp"
