// Copyright (c) 2026, The rlrs-lab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef RLRS_RLRS_HPP
#define RLRS_RLRS_HPP

#include "rlrs/autodiff.hpp"
#include "rlrs/checkpoint.hpp"
#include "rlrs/config.hpp"
#include "rlrs/data.hpp"
#include "rlrs/errors.hpp"
#include "rlrs/losses.hpp"
#include "rlrs/metrics.hpp"
#include "rlrs/model.hpp"
#include "rlrs/optimizer.hpp"
#include "rlrs/schedule.hpp"
#include "rlrs/search.hpp"
#include "rlrs/tensor.hpp"
#include "rlrs/trainer.hpp"
#include "rlrs/util.hpp"

#endif  // RLRS_RLRS_HPP
