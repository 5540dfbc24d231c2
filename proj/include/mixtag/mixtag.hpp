// Copyright 2026 The mixtag Authors
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

#include "mixtag/augment.hpp"
#include "mixtag/dataset.hpp"
#include "mixtag/dsp.hpp"
#include "mixtag/error.hpp"
#include "mixtag/feature_io.hpp"
#include "mixtag/harness/config.hpp"
#include "mixtag/harness/cross_validate.hpp"
#include "mixtag/harness/train.hpp"
#include "mixtag/labels.hpp"
#include "mixtag/metrics.hpp"
#include "mixtag/nn/adam.hpp"
#include "mixtag/nn/checkpoint.hpp"
#include "mixtag/nn/grad_check.hpp"
#include "mixtag/nn/loss.hpp"
#include "mixtag/nn/model.hpp"
#include "mixtag/rng.hpp"
#include "mixtag/synth.hpp"
#include "mixtag/wav.hpp"
