#pragma once

#include "partforge/common.hpp"
#include "partforge/raster.hpp"
#include "partforge/pyramid.hpp"
#include "partforge/hog.hpp"
#include "partforge/whitening.hpp"
#include "partforge/feature_io.hpp"
#include "partforge/model.hpp"
#include "partforge/model_io.hpp"
#include "partforge/partgen.hpp"
#include "partforge/bound.hpp"
#include "partforge/cache_types.hpp"
#include "partforge/qpsolver.hpp"
#include "partforge/cache.hpp"
#include "partforge/jointtrain.hpp"
#include "partforge/select.hpp"
#include "partforge/pipeline.hpp"
