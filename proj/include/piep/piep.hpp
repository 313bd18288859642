/* Copyright 2026 The piep Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include "piep/baselines.hpp"
#include "piep/config.hpp"
#include "piep/errors.hpp"
#include "piep/eval.hpp"
#include "piep/features.hpp"
#include "piep/model_tree.hpp"
#include "piep/predictor.hpp"
#include "piep/rng.hpp"
#include "piep/sim_profiler.hpp"
#include "piep/version.hpp"
