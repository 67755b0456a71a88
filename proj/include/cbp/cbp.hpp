#pragma once

#include "cbp/error.hpp"
#include "cbp/model.hpp"
#include "cbp/weights.hpp"
#include "cbp/risk.hpp"
#include "cbp/optimizer.hpp"
#include "cbp/variance.hpp"
#include "cbp/predictors.hpp"
#include "cbp/general_mixed.hpp"
#include "cbp/smoothing_spline.hpp"
#include "cbp/popmean.hpp"
#include "cbp/simulation.hpp"
#include "cbp/io.hpp"
