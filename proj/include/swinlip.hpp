#pragma once

#include "swinlip/bench.hpp"
#include "swinlip/config.hpp"
#include "swinlip/conv.hpp"
#include "swinlip/cost.hpp"
#include "swinlip/gradcheck.hpp"
#include "swinlip/gradcheck_suite.hpp"
#include "swinlip/model.hpp"
#include "swinlip/ops.hpp"
#include "swinlip/params.hpp"
#include "swinlip/resnet.hpp"
#include "swinlip/rng.hpp"
#include "swinlip/stem.hpp"
#include "swinlip/swin.hpp"
#include "swinlip/tape.hpp"
#include "swinlip/temporal.hpp"
#include "swinlip/tensor.hpp"
#include "swinlip/tensor_io.hpp"
#include "swinlip/train.hpp"
#include "swinlip/weights.hpp"
