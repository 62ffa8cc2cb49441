#pragma once

#include "synthctl/align.hpp"
#include "synthctl/calendar.hpp"
#include "synthctl/csv.hpp"
#include "synthctl/errors.hpp"
#include "synthctl/impact.hpp"
#include "synthctl/io.hpp"
#include "synthctl/panel.hpp"
#include "synthctl/rsc.hpp"
#include "synthctl/sir.hpp"
#include "synthctl/synthint.hpp"
#include "synthctl/trendcluster.hpp"
#include "synthctl/version.hpp"
