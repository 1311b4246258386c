#pragma once

// Frame-wise temporal action segmentation: multi-stage temporal
// convolutional networks with hand-derived gradients, training, metrics,
// and data plumbing. Header-only; include this to get everything.

#include "mstcn/bytes.hpp"
#include "mstcn/checkpoint.hpp"
#include "mstcn/config.hpp"
#include "mstcn/data_io.hpp"
#include "mstcn/errors.hpp"
#include "mstcn/finite_diff.hpp"
#include "mstcn/gradcheck.hpp"
#include "mstcn/layers.hpp"
#include "mstcn/losses.hpp"
#include "mstcn/metrics.hpp"
#include "mstcn/model.hpp"
#include "mstcn/optimizer.hpp"
#include "mstcn/rng.hpp"
#include "mstcn/tensor.hpp"
#include "mstcn/trainer.hpp"
