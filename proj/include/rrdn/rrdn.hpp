#pragma once

#include "rrdn/adam.hpp"
#include "rrdn/checkpoint.hpp"
#include "rrdn/config.hpp"
#include "rrdn/data.hpp"
#include "rrdn/eval.hpp"
#include "rrdn/gradcheck.hpp"
#include "rrdn/gradcheck_suite.hpp"
#include "rrdn/image_io.hpp"
#include "rrdn/losses.hpp"
#include "rrdn/network.hpp"
#include "rrdn/ops.hpp"
#include "rrdn/param_store.hpp"
#include "rrdn/pipeline.hpp"
#include "rrdn/tensor.hpp"
#include "rrdn/threads.hpp"
#include "rrdn/warp.hpp"
