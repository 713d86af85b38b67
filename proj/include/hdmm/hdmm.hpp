// Copyright 2026 The HDMM Authors
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

#pragma once

#include "hdmm/bench.hpp"
#include "hdmm/common.hpp"
#include "hdmm/io.hpp"
#include "hdmm/lbfgs.hpp"
#include "hdmm/linalg.hpp"
#include "hdmm/marginals.hpp"
#include "hdmm/mechanism.hpp"
#include "hdmm/optimize.hpp"
#include "hdmm/strategy.hpp"
#include "hdmm/workload.hpp"
