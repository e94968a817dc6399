#pragma once

#include "enlfcn/cost.hpp"
#include "enlfcn/error.hpp"
#include "enlfcn/io.hpp"
#include "enlfcn/labels.hpp"
#include "enlfcn/metrics.hpp"
#include "enlfcn/network.hpp"
#include "enlfcn/nonlocal.hpp"
#include "enlfcn/npy.hpp"
#include "enlfcn/ops.hpp"
#include "enlfcn/parallel.hpp"
#include "enlfcn/random.hpp"
#include "enlfcn/synthetic.hpp"
#include "enlfcn/tape.hpp"
#include "enlfcn/tensor.hpp"
#include "enlfcn/training.hpp"
