"""
异常定义

所有异常都继承自 IMACError；输入类和数值定义域类异常同时继承 ValueError，
调用方按 ValueError 捕获的老写法仍然有效。
"""


class IMACError(Exception):
    """功率最小化系统的基础异常"""


class InputError(IMACError, ValueError):
    """输入参数错误：维度不匹配、扩展长度为0、信道含非有限值等"""


class ScenarioError(InputError):
    """场景文件解析或校验失败，消息中带出错的键"""


class DomainError(IMACError, ValueError):
    """数值定义域错误：协方差非半正定、Γ奇异、Cholesky分解失败"""


class SolverError(IMACError):
    """SCA外层迭代中止（t > 1 时子问题不可行等不应出现的情况）"""


class CertificationError(IMACError):
    """真实速率复核失败：某用户的速率余量低于容差"""
