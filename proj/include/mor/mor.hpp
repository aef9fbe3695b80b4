// Copyright (c) 2026, The mor-restore Authors
// SPDX-License-Identifier: Apache-2.0
//
// Umbrella header for the library (the command line lives in mor/cli.hpp).

#pragma once

#include "mor/analysis.hpp"
#include "mor/checkpoint.hpp"
#include "mor/dataset.hpp"
#include "mor/degradation.hpp"
#include "mor/embedding.hpp"
#include "mor/estimator.hpp"
#include "mor/image.hpp"
#include "mor/kv_config.hpp"
#include "mor/losses.hpp"
#include "mor/metrics.hpp"
#include "mor/mor_layer.hpp"
#include "mor/networks.hpp"
#include "mor/numeric.hpp"
#include "mor/textures.hpp"
#include "mor/trainer.hpp"
