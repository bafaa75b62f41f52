// Copyright 2026 The SUA Workbench Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Everything at once. Individual headers can be included on their own.

#pragma once

#include "sua/commands.hpp"
#include "sua/config.hpp"
#include "sua/evaluate.hpp"
#include "sua/experiment.hpp"
#include "sua/io.hpp"
#include "sua/metrics.hpp"
#include "sua/model.hpp"
#include "sua/perturb.hpp"
#include "sua/prob.hpp"
#include "sua/rng.hpp"
#include "sua/score.hpp"
#include "sua/train.hpp"
#include "sua/world.hpp"
