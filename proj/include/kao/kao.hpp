#pragma once

// Umbrella header.

#include "kao/aggregation.hpp"
#include "kao/bank.hpp"
#include "kao/baselines.hpp"
#include "kao/config.hpp"
#include "kao/convex.hpp"
#include "kao/csv.hpp"
#include "kao/experiment.hpp"
#include "kao/harness.hpp"
#include "kao/kalman.hpp"
#include "kao/metrics.hpp"
#include "kao/model.hpp"
#include "kao/oracle.hpp"
#include "kao/record_io.hpp"
#include "kao/rng.hpp"
#include "kao/smoother.hpp"
#include "kao/types.hpp"
