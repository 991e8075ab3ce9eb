// Copyright 2026 The bionerf-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "bionerf/checkpoint.hpp"
#include "bionerf/config.hpp"
#include "bionerf/data.hpp"
#include "bionerf/encoding.hpp"
#include "bionerf/errors.hpp"
#include "bionerf/field.hpp"
#include "bionerf/image.hpp"
#include "bionerf/metrics.hpp"
#include "bionerf/model.hpp"
#include "bionerf/random.hpp"
#include "bionerf/rendering.hpp"
#include "bionerf/tensor.hpp"
#include "bionerf/trainer.hpp"
#include "bionerf/training.hpp"
