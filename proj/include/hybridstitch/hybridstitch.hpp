#pragma once

#include "hybridstitch/analysis.hpp"
#include "hybridstitch/config.hpp"
#include "hybridstitch/cost_model.hpp"
#include "hybridstitch/denoiser.hpp"
#include "hybridstitch/latent.hpp"
#include "hybridstitch/sgrd.hpp"
#include "hybridstitch/stitcher.hpp"
#include "hybridstitch/tensor.hpp"
