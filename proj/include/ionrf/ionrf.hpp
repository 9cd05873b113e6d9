#pragma once

#include "ionrf/constants.hpp"
#include "ionrf/double_resonance.hpp"
#include "ionrf/errors.hpp"
#include "ionrf/fitting.hpp"
#include "ionrf/goodness_of_fit.hpp"
#include "ionrf/ion_chain.hpp"
#include "ionrf/protocol.hpp"
#include "ionrf/random.hpp"
#include "ionrf/spectrum.hpp"
#include "ionrf/thermometry.hpp"
#include "ionrf/zeeman.hpp"
