#pragma once

#include "xfer/checkpoint.hpp"
#include "xfer/config.hpp"
#include "xfer/data.hpp"
#include "xfer/discriminator.hpp"
#include "xfer/errors.hpp"
#include "xfer/experiment.hpp"
#include "xfer/gradcheck.hpp"
#include "xfer/gradcheck_suite.hpp"
#include "xfer/layers.hpp"
#include "xfer/losses.hpp"
#include "xfer/metrics.hpp"
#include "xfer/ops.hpp"
#include "xfer/optim.hpp"
#include "xfer/rng.hpp"
#include "xfer/tensor.hpp"
#include "xfer/trainer.hpp"
