// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "sffda/autodiff.hpp"
#include "sffda/behavior.hpp"
#include "sffda/dataset.hpp"
#include "sffda/errors.hpp"
#include "sffda/features.hpp"
#include "sffda/ippg.hpp"
#include "sffda/kernels.hpp"
#include "sffda/landmarks.hpp"
#include "sffda/metrics.hpp"
#include "sffda/network.hpp"
#include "sffda/optim.hpp"
#include "sffda/preprocess.hpp"
#include "sffda/serialize.hpp"
#include "sffda/siamese.hpp"
#include "sffda/streams.hpp"
#include "sffda/synth.hpp"
#include "sffda/tensor.hpp"
