// Copyright Contributors to the bevsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "bevsplat/baselines.hpp"
#include "bevsplat/config.hpp"
#include "bevsplat/error.hpp"
#include "bevsplat/geometry.hpp"
#include "bevsplat/gradcheck.hpp"
#include "bevsplat/losses.hpp"
#include "bevsplat/matching.hpp"
#include "bevsplat/parallel.hpp"
#include "bevsplat/pipeline.hpp"
#include "bevsplat/primitives.hpp"
#include "bevsplat/renderer.hpp"
#include "bevsplat/synth.hpp"
#include "bevsplat/tensor.hpp"
#include "bevsplat/tensor_io.hpp"
#include "bevsplat/workload.hpp"
