// Copyright 2026 The ganrec Authors. All rights reserved.
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

#include "ganrec/adversarial_training.hpp"
#include "ganrec/cdqn.hpp"
#include "ganrec/checkpoint.hpp"
#include "ganrec/choice.hpp"
#include "ganrec/common.hpp"
#include "ganrec/core_data.hpp"
#include "ganrec/embed_net.hpp"
#include "ganrec/environment.hpp"
#include "ganrec/experiment.hpp"
#include "ganrec/gradcheck.hpp"
