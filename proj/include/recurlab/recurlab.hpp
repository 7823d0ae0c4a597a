#pragma once

#include "errors.hpp"
#include "rng.hpp"
#include "stats.hpp"
#include "parallel.hpp"
#include "interval_maps.hpp"
#include "systems.hpp"
#include "interval_analysis.hpp"
#include "billiard.hpp"
#include "recurrence.hpp"
#include "borel_cantelli.hpp"
#include "experiment.hpp"
