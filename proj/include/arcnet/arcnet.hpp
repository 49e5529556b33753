#pragma once

// Convenience umbrella: pulls in the whole library. Individual headers are
// self-contained, so include just what you use when compile time matters.

#include "arcnet/capsules.hpp"
#include "arcnet/checkpoint.hpp"
#include "arcnet/dataset.hpp"
#include "arcnet/encoder.hpp"
#include "arcnet/errors.hpp"
#include "arcnet/experiments.hpp"
#include "arcnet/gradcheck.hpp"
#include "arcnet/loss.hpp"
#include "arcnet/metrics.hpp"
#include "arcnet/model.hpp"
#include "arcnet/ops.hpp"
#include "arcnet/pamap2.hpp"
#include "arcnet/realworld.hpp"
#include "arcnet/rng.hpp"
#include "arcnet/serial.hpp"
#include "arcnet/tape.hpp"
#include "arcnet/tensor.hpp"
#include "arcnet/train.hpp"
#include "arcnet/window.hpp"
