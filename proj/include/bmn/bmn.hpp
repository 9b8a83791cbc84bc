#pragma once

#include "bmn/autodiff.hpp"
#include "bmn/binary_io.hpp"
#include "bmn/checkpoint.hpp"
#include "bmn/config.hpp"
#include "bmn/dataset.hpp"
#include "bmn/diagnose.hpp"
#include "bmn/eval.hpp"
#include "bmn/kl_full.hpp"
#include "bmn/kl_loss.hpp"
#include "bmn/log.hpp"
#include "bmn/matrix.hpp"
#include "bmn/mining.hpp"
#include "bmn/model.hpp"
#include "bmn/svg.hpp"
#include "bmn/target.hpp"
#include "bmn/trainer.hpp"
