#pragma once

#include "odegrad/chebyshev.hpp"
#include "odegrad/diagnostics.hpp"
#include "odegrad/dopri5.hpp"
#include "odegrad/errors.hpp"
#include "odegrad/experiments.hpp"
#include "odegrad/field.hpp"
#include "odegrad/param_vector.hpp"
#include "odegrad/strategies.hpp"
#include "odegrad/vec.hpp"
