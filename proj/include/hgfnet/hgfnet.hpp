#pragma once

#include "hgfnet/error.hpp"
#include "hgfnet/random.hpp"
#include "hgfnet/tensor.hpp"
#include "hgfnet/autodiff.hpp"
#include "hgfnet/ops.hpp"
#include "hgfnet/fft.hpp"
#include "hgfnet/layers.hpp"
#include "hgfnet/gfnet.hpp"
#include "hgfnet/model.hpp"
#include "hgfnet/training.hpp"
#include "hgfnet/data.hpp"
#include "hgfnet/metrics.hpp"
#include "hgfnet/image.hpp"
#include "hgfnet/pipeline.hpp"
