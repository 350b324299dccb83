// Copyright 2026 The fuselora Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "fuselora/adapters.hpp"
#include "fuselora/dispatch.hpp"
#include "fuselora/elementwise.hpp"
#include "fuselora/error.hpp"
#include "fuselora/gemm.hpp"
#include "fuselora/io.hpp"
#include "fuselora/matrix.hpp"
#include "fuselora/model.hpp"
#include "fuselora/perf.hpp"
#include "fuselora/rng.hpp"
#include "fuselora/routing.hpp"
#include "fuselora/sgmm.hpp"
