#pragma once

#include "logicsolver/corpus.hpp"
#include "logicsolver/error.hpp"
#include "logicsolver/expr.hpp"
#include "logicsolver/logic.hpp"
#include "logicsolver/logicgen.hpp"
#include "logicsolver/metrics.hpp"
#include "logicsolver/nn/layers.hpp"
#include "logicsolver/nn/optim.hpp"
#include "logicsolver/nn/tensor.hpp"
#include "logicsolver/pipeline.hpp"
#include "logicsolver/rational.hpp"
#include "logicsolver/retriever.hpp"
#include "logicsolver/rng.hpp"
#include "logicsolver/solver.hpp"
