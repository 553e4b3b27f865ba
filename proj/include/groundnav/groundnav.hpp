#pragma once

#include "groundnav/common.hpp"
#include "groundnav/exemplar_db.hpp"
#include "groundnav/embed_metric.hpp"
#include "groundnav/instruction.hpp"
#include "groundnav/corpus_align.hpp"
#include "groundnav/geo_mapping.hpp"
#include "groundnav/sim_env.hpp"
#include "groundnav/grounding.hpp"
#include "groundnav/policy.hpp"
#include "groundnav/eval.hpp"
