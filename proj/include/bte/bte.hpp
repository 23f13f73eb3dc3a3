#pragma once

// Umbrella header.
#include "bte/common.hpp"
#include "bte/config.hpp"
#include "bte/events.hpp"
#include "bte/fit_io.hpp"
#include "bte/ingest.hpp"
#include "bte/io.hpp"
#include "bte/lmm.hpp"
#include "bte/pipeline.hpp"
#include "bte/preference.hpp"
#include "bte/records.hpp"
#include "bte/relevance.hpp"
#include "bte/report.hpp"
#include "bte/stats.hpp"
#include "bte/synth.hpp"
