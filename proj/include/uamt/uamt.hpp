// SPDX-License-Identifier: Apache-2.0
// Umbrella header: every module of the library.
#pragma once

#include "uamt/errors.hpp"
#include "uamt/nnkit/grad_check.hpp"
#include "uamt/nnkit/grid.hpp"
#include "uamt/nnkit/layers.hpp"
#include "uamt/nnkit/optim.hpp"
#include "uamt/nnkit/param_set.hpp"
#include "uamt/nnkit/rng.hpp"
#include "uamt/detector/box.hpp"
#include "uamt/detector/losses.hpp"
#include "uamt/detector/network.hpp"
#include "uamt/scenegen/scene.hpp"
#include "uamt/scenegen/generator.hpp"
#include "uamt/scenegen/augment.hpp"
#include "uamt/scenegen/dataset_io.hpp"
#include "uamt/adapt/types.hpp"
#include "uamt/adapt/training.hpp"
#include "uamt/adapt/pseudo_labels.hpp"
#include "uamt/adapt/pipeline.hpp"
#include "uamt/evalkit/metrics.hpp"
#include "uamt/evalkit/evaluate.hpp"
#include "uamt/evalkit/reports.hpp"
#include "uamt/config.hpp"
#include "uamt/cli/artifacts.hpp"
#include "uamt/cli/commands.hpp"
