#pragma once

#include "owf/assignment.hpp"
#include "owf/config.hpp"
#include "owf/error.hpp"
#include "owf/geometry.hpp"
#include "owf/harness.hpp"
#include "owf/matching.hpp"
#include "owf/metrics.hpp"
#include "owf/pseudolabel.hpp"
#include "owf/random.hpp"
#include "owf/records.hpp"
#include "owf/replay.hpp"
#include "owf/serialization.hpp"
#include "owf/simulator.hpp"
#include "owf/split.hpp"
#include "owf/types.hpp"
#include "owf/vlmfilter.hpp"
