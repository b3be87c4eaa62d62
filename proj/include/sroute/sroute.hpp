// Copyright 2026 The sroute Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Umbrella header.

#include "sroute/analysis.hpp"
#include "sroute/checkpoint.hpp"
#include "sroute/config.hpp"
#include "sroute/data.hpp"
#include "sroute/errors.hpp"
#include "sroute/eval.hpp"
#include "sroute/layers.hpp"
#include "sroute/losses.hpp"
#include "sroute/model.hpp"
#include "sroute/ops.hpp"
#include "sroute/optim.hpp"
#include "sroute/rng.hpp"
#include "sroute/routing.hpp"
#include "sroute/savings.hpp"
#include "sroute/surprise.hpp"
#include "sroute/tensor.hpp"
#include "sroute/train.hpp"
#include "sroute/transformer.hpp"
