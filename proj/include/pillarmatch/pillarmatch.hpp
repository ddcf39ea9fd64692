#pragma once

#include "pillarmatch/error.hpp"
#include "pillarmatch/rigid_transform.hpp"
#include "pillarmatch/kdtree.hpp"
#include "pillarmatch/cloud.hpp"
#include "pillarmatch/kitti.hpp"
#include "pillarmatch/synthetic.hpp"
#include "pillarmatch/autodiff/tape.hpp"
#include "pillarmatch/autodiff/ops.hpp"
#include "pillarmatch/autodiff/batchnorm.hpp"
#include "pillarmatch/autodiff/grad_check.hpp"
#include "pillarmatch/network.hpp"
#include "pillarmatch/transport.hpp"
#include "pillarmatch/losses.hpp"
#include "pillarmatch/adam.hpp"
#include "pillarmatch/registration.hpp"
#include "pillarmatch/container.hpp"
#include "pillarmatch/dataset.hpp"
#include "pillarmatch/train.hpp"
#include "pillarmatch/eval.hpp"
