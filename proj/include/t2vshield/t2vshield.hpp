#pragma once

#include "t2vshield/adapters.hpp"
#include "t2vshield/config.hpp"
#include "t2vshield/core.hpp"
#include "t2vshield/digest.hpp"
#include "t2vshield/error.hpp"
#include "t2vshield/eval_metrics.hpp"
#include "t2vshield/input_defense.hpp"
#include "t2vshield/media.hpp"
#include "t2vshield/mock_adapters.hpp"
#include "t2vshield/multiscope_detect.hpp"
#include "t2vshield/pipeline.hpp"
#include "t2vshield/posneg_rag.hpp"
#include "t2vshield/remote_adapters.hpp"
#include "t2vshield/risktrace_cot.hpp"
#include "t2vshield/wire.hpp"
#include "t2vshield/wire_server.hpp"
