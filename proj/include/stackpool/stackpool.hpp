#pragma once

#include "bench.hpp"
#include "crowd.hpp"
#include "gradcheck.hpp"
#include "metrics.hpp"
#include "network.hpp"
#include "ops.hpp"
#include "pooling.hpp"
#include "random.hpp"
#include "serialize.hpp"
#include "tensor.hpp"
#include "training.hpp"
