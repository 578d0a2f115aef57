from .pricing import total as order_total
