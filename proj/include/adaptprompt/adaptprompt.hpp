// SPDX-License-Identifier: Apache-2.0
//
// Umbrella header.

#ifndef ADAPTPROMPT_ADAPTPROMPT_HPP
#define ADAPTPROMPT_ADAPTPROMPT_HPP

#include "adaptprompt/adaptation.hpp"
#include "adaptprompt/analysis.hpp"
#include "adaptprompt/attention.hpp"
#include "adaptprompt/backbone.hpp"
#include "adaptprompt/commands.hpp"
#include "adaptprompt/config.hpp"
#include "adaptprompt/data.hpp"
#include "adaptprompt/fft.hpp"
#include "adaptprompt/grad.hpp"
#include "adaptprompt/image_ops.hpp"
#include "adaptprompt/io.hpp"
#include "adaptprompt/metrics.hpp"
#include "adaptprompt/ops.hpp"
#include "adaptprompt/rng.hpp"
#include "adaptprompt/tensor.hpp"

#endif
