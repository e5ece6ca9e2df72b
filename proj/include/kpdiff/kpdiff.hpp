#pragma once

#include "kpdiff/assignment.hpp"
#include "kpdiff/autodiff.hpp"
#include "kpdiff/checkpoint.hpp"
#include "kpdiff/config.hpp"
#include "kpdiff/deformations.hpp"
#include "kpdiff/edm.hpp"
#include "kpdiff/error.hpp"
#include "kpdiff/evaluation.hpp"
#include "kpdiff/generate.hpp"
#include "kpdiff/geometry.hpp"
#include "kpdiff/gradcheck.hpp"
#include "kpdiff/io.hpp"
#include "kpdiff/losses.hpp"
#include "kpdiff/metrics.hpp"
#include "kpdiff/model.hpp"
#include "kpdiff/nn_search.hpp"
#include "kpdiff/parallel.hpp"
#include "kpdiff/prior.hpp"
#include "kpdiff/rng.hpp"
#include "kpdiff/synthetic.hpp"
#include "kpdiff/train.hpp"
