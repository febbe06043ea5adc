#pragma once

#include "bdsdep/backward.hpp"
#include "bdsdep/catalog.hpp"
#include "bdsdep/diagnostics.hpp"
#include "bdsdep/drivers.hpp"
#include "bdsdep/errors.hpp"
#include "bdsdep/feynman_kac.hpp"
#include "bdsdep/forward.hpp"
#include "bdsdep/mollify.hpp"
#include "bdsdep/noise.hpp"
#include "bdsdep/oracle.hpp"
#include "bdsdep/problem.hpp"
#include "bdsdep/quadrature.hpp"
#include "bdsdep/regression.hpp"
#include "bdsdep/rng.hpp"
#include "bdsdep/version.hpp"
