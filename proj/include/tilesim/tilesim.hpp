#pragma once

#include "tilesim/accel.hpp"
#include "tilesim/config.hpp"
#include "tilesim/core.hpp"
#include "tilesim/explore.hpp"
#include "tilesim/l2.hpp"
#include "tilesim/litmus.hpp"
#include "tilesim/llc.hpp"
#include "tilesim/monitor.hpp"
#include "tilesim/noc.hpp"
#include "tilesim/oracle.hpp"
#include "tilesim/soc.hpp"
#include "tilesim/stats.hpp"
#include "tilesim/trace.hpp"
#include "tilesim/types.hpp"
#include "tilesim/util.hpp"
#include "tilesim/workload.hpp"
