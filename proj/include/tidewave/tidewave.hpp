#pragma once

#include "csv.hpp"
#include "cwt.hpp"
#include "detector.hpp"
#include "error.hpp"
#include "features.hpp"
#include "fusion.hpp"
#include "ingest.hpp"
#include "metric_series.hpp"
#include "pipeline.hpp"
#include "regressor.hpp"
#include "sim.hpp"
#include "stats.hpp"
#include "svg.hpp"
