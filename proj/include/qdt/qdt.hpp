#pragma once

#include "analysis.hpp"
#include "detectors.hpp"
#include "entanglement.hpp"
#include "errors.hpp"
#include "fock.hpp"
#include "io.hpp"
#include "solver.hpp"
