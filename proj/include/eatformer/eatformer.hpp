#pragma once

#include "eatformer/analysis.hpp"
#include "eatformer/attention.hpp"
#include "eatformer/block.hpp"
#include "eatformer/checkpoint.hpp"
#include "eatformer/dataset.hpp"
#include "eatformer/ea.hpp"
#include "eatformer/image.hpp"
#include "eatformer/model.hpp"
#include "eatformer/norm.hpp"
#include "eatformer/ops.hpp"
#include "eatformer/optim.hpp"
#include "eatformer/rng.hpp"
#include "eatformer/selfcheck.hpp"
#include "eatformer/tensor.hpp"
#include "eatformer/train.hpp"
