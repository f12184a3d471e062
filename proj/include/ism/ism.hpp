#pragma once

#include "ism/analysis.hpp"
#include "ism/checkpoint.hpp"
#include "ism/config.hpp"
#include "ism/data.hpp"
#include "ism/ema.hpp"
#include "ism/log.hpp"
#include "ism/nets.hpp"
#include "ism/objectives.hpp"
#include "ism/rng.hpp"
#include "ism/sampler.hpp"
#include "ism/sot.hpp"
#include "ism/svg.hpp"
#include "ism/tensor.hpp"
#include "ism/trainer.hpp"
#include "ism/wavelet.hpp"
